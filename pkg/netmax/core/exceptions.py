from typing import Any, List, Optional


class NetMaxError(Exception):
    """Base exception for NetMax errors."""
    pass


class ConfigInvalidError(NetMaxError):
    """Exception raised when an experiment config cannot be parsed or validated."""
    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        column: Optional[int] = None,
        errors: Optional[List[Any]] = None,
    ):
        self.message = message
        self.line = line
        self.column = column
        self.errors = errors or []
        location = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{location}")

    def describe(self) -> str:
        lines = [str(self)]
        for err in self.errors:
            loc = ".".join(str(part) for part in err.get("loc", ()))
            lines.append(f"  {loc}: {err.get('msg')}")
        return "\n".join(lines)

from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def test_compose_builds_from_local_dockerfile():
    compose = (ROOT / "docker-compose.yml").read_text()
    assert "build: ." in compose
    assert (ROOT / "Dockerfile").is_file()


def test_image_serves_the_policy_app():
    text = (ROOT / "Dockerfile").read_text()
    lines = text.splitlines()
    copied = [line.split()[1] for line in lines if line.startswith("COPY ")]
    assert "netmax/" in copied
    assert "requirements.txt" in copied
    cmd = next(line for line in lines if line.startswith("CMD "))
    assert "netmax.main:app" in cmd
    # compose healthcheck shells out to curl
    assert "curl" in text

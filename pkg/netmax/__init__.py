"""NetMax: decentralized asynchronous consensus SGD over heterogeneous networks."""

__version__ = "1.0.0"

"""Reference inference shim: serves small locally hosted generator,
classifier, and embedding models behind the expert-provider wire protocol,
so pipeline runs work unchanged against real endpoints."""

__version__ = "0.1.0"

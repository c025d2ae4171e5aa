import importlib.metadata

try:
    __version__ = importlib.metadata.version("measure-fw")
except importlib.metadata.PackageNotFoundError:
    __version__ = "dev"

from importlib.metadata import version as _pkg_version, PackageNotFoundError

# Source of truth is pyproject.toml (baked into dist-info at install time).
# Guard covers running from an uninstalled source checkout.
try:
    __version__ = _pkg_version("potline")
except PackageNotFoundError:
    __version__ = "0.0.0+dev"

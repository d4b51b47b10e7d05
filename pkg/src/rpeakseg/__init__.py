"""ECG R-peak detection as 1D semantic segmentation with a numpy U-Net."""
from importlib import metadata

try:
    __version__ = metadata.version("rpeakseg")
except metadata.PackageNotFoundError:
    __version__ = "0+unknown"

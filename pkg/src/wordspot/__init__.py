"""Word spotting with PHOC-regressing CNNs on a small numpy autodiff core."""

__version__ = "0.1.0"

"""Set-Membership identification of one-step ARX predictors with guaranteed multi-step error bounds."""

__version__ = "0.1.0"

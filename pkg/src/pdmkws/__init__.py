"""PDM codec and spiking keyword-spotting toolkit."""

__version__ = "0.1.0"

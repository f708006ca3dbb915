"""gridlight: grid traffic microsimulation plus a modular, meta-trained
signal controller and the experiment harness around them."""

__version__ = "0.1.0"

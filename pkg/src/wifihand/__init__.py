"""Hand mask and 3D hand pose reconstruction from WiFi channel state
information, validated against a built-in synthetic channel oracle."""

__version__ = "0.1.0"

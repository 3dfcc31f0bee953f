"""Non-autoregressive spoken-dialogue generation with conditional flow
matching, at desk scale on a synthetic speech-feature domain."""

__version__ = "0.1.0"

"""Learned point cloud geometry codec with window-based entropy coding."""

__version__ = "0.1.0"

_CODEC_NAMES = ("CodecConfig", "encode", "decode", "encode_file", "decode_file")

__all__ = list(_CODEC_NAMES) + ["__version__"]


def __getattr__(name):
    # Deferred so that `pointsoup.kernels` stays importable on its own.
    if name in _CODEC_NAMES:
        from pointsoup import codec

        return getattr(codec, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

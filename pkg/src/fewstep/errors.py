class OODError(FloatingPointError):
    """A state left the finite domain (non-finite or exploding coordinates)."""


class DecorationError(TypeError):
    """The model does not expose the feature decomposition a decorator needs."""

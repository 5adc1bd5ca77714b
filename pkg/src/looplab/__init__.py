"""looplab: a desk-scale lab for looped, input-injected decoder
transformers that learn data-fitting algorithms in-context."""

__version__ = "0.1.0"

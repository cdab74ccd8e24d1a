"""Joint entity classification and relation extraction toolkit.

CNN sentence encoders feed a three-step score sequence (entity type,
relation, entity type) into a globally normalized linear-chain CRF; a
locally normalized softmax output layer is available as a baseline.
"""

__version__ = "0.1.0"

from entrel.corpus import LabelSpace

__all__ = ["LabelSpace", "__version__"]

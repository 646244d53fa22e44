"""plugchat: internet-augmented fusion-in-decoder dialogue system.

Subpackages cover the full pipeline: subword tokenizer, encoder-decoder
model with slot fusion, curriculum training, instruction templating,
BM25 retrieval with query rewrite, penalized beam/sampling decoding,
corpus filtering, evaluation metrics, and an HTTP chat service.
"""

__version__ = "0.1.0"

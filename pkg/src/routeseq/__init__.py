"""Seq2Seq shortest-route learning with information-geometric context encodings.

The package trains encoder/decoder recurrent networks on A*-generated
shortest routes of a road graph, optionally re-encoding the encoder's
context vector as a Fisher vector (diagonal-covariance GMM score) or a
VLAD residual vector before decoding.  The same engine runs the binary
copy and associative-recall benchmarks.
"""

__version__ = "0.1.0"

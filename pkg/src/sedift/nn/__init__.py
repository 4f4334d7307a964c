"""Hand-rolled double-precision convolutional network stack.

`layers` holds the per-layer forward/backward primitives, `model` assembles
the encoder-decoder generator and the patch discriminator, `checkpoint`
persists parameters. Everything is plain numpy; gradients are exact
(verified against central finite differences in the test suite).
"""

from .layers import (  # noqa: F401
    LayerSpec,
    conv_forward, conv_backward,
    maxpool2_forward, maxpool2_backward,
    tconv2_forward, tconv2_backward,
    leaky_relu_forward, leaky_relu_backward,
    tanh_forward, tanh_backward,
    sigmoid_forward, sigmoid_backward,
    dropout_forward, dropout_backward,
    concat_forward, concat_backward,
    fuse_concat_forward, fuse_concat_backward,
    fuse_learned_forward, fuse_learned_backward,
    layer_forward, layer_backward,
)
from .model import (  # noqa: F401
    GeneratorConfig, GeneratorNet, DiscriminatorNet,
    stage_widths, encoder_widths_flat,
)
from .checkpoint import save_checkpoint, load_checkpoint  # noqa: F401

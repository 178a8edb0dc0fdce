"""Layer-spec builders for the FHN encoder, decoder and parameter-time FFNN.

The defaults follow the published 1-D layout: five conv+pool stages with
(30, 25, 20, 15, 10) filters, dense 32 -> 16 -> latent on the encoder side and
the mirror image with upsampling on the decoder side.  The decoder's first
reshape has length ``N / 2**stages`` so it works for any grid size.
"""
from __future__ import annotations

ENCODER_FILTERS = (30, 25, 20, 15, 10)
ENCODER_DENSE = (32, 16)
FFNN_HIDDEN = (8, 16, 32, 64, 128)


def encoder_specs(state_dim: int, latent_dim: int = 2, filters=ENCODER_FILTERS,
                  dense=ENCODER_DENSE, kernel_size: int = 3, pool: int = 2) -> list[dict]:
    if state_dim % pool ** len(filters):
        raise ValueError(f"state dimension {state_dim} is not divisible by {pool}**{len(filters)}")
    specs: list[dict] = []
    for f in filters:
        specs += [
            {"kind": "conv1d", "filters": f, "kernel_size": kernel_size, "stride": 1},
            {"kind": "activation", "name": "swish"},
            {"kind": "maxpool1d", "size": pool},
        ]
    specs.append({"kind": "flatten"})
    for units in dense:
        specs += [{"kind": "dense", "units": units}, {"kind": "activation", "name": "swish"}]
    specs.append({"kind": "dense", "units": latent_dim})
    return specs


def decoder_specs(state_dim: int, latent_dim: int = 2, filters=ENCODER_FILTERS,
                  dense=ENCODER_DENSE, kernel_size: int = 3, pool: int = 2) -> list[dict]:
    stages = len(filters)
    if state_dim % pool**stages:
        raise ValueError(f"state dimension {state_dim} is not divisible by {pool}**{stages}")
    base = state_dim // pool**stages
    specs: list[dict] = []
    # mirrored dense stack; the widest dense feeds the reshape so it must match base length
    for units in tuple(reversed(dense))[:-1]:
        specs += [{"kind": "dense", "units": units}, {"kind": "activation", "name": "swish"}]
    specs += [{"kind": "dense", "units": base}, {"kind": "activation", "name": "swish"},
              {"kind": "reshape", "shape": [base, 1]}]
    for f in reversed(filters):
        specs += [
            {"kind": "conv1d", "filters": f, "kernel_size": kernel_size, "stride": 1},
            {"kind": "activation", "name": "swish"},
            {"kind": "upsample1d", "factor": pool},
        ]
    specs.append({"kind": "conv1d", "filters": 1, "kernel_size": kernel_size, "stride": 1})
    return specs


def ffnn_specs(n_inputs: int = 2, latent_dim: int = 2, hidden=FFNN_HIDDEN) -> list[dict]:
    specs: list[dict] = []
    for units in hidden:
        specs += [{"kind": "dense", "units": units}, {"kind": "activation", "name": "swish"}]
    specs.append({"kind": "dense", "units": latent_dim})
    return specs

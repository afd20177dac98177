"""Checkpoint container: named parameter arrays plus JSON metadata.

Stored as a compressed npz. Parameter arrays keep their state-dict names
under a ``param./`` prefix; everything else (config echo, seed, epoch,
losses, normalization stats) lives in a JSON string under ``__meta__``.
No pickling is involved, so files are portable and inspectable.
"""

import json

import numpy as np

_PARAM_PREFIX = "param./"
_META_KEY = "__meta__"


def save_checkpoint(path, params, meta):
    """Write parameter arrays (dict name -> ndarray) and metadata."""
    arrays = {_PARAM_PREFIX + name: np.asarray(value) for name, value in params.items()}
    arrays[_META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    np.savez_compressed(path, **arrays)


def load_checkpoint(path):
    """Read back (params, meta) from a checkpoint file."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data[_META_KEY]))
        params = {
            key[len(_PARAM_PREFIX):]: data[key]
            for key in data.files
            if key.startswith(_PARAM_PREFIX)
        }
    return params, meta


def state_dict_to_numpy(module):
    return {name: tensor.detach().cpu().numpy() for name, tensor in module.state_dict().items()}


def load_state_dict_from_numpy(module, params):
    import torch

    state = {name: torch.from_numpy(np.asarray(value)) for name, value in params.items()}
    module.load_state_dict(state)
    return module

"""Home of `ParameterStore`, `Checkpoint` and the tensor archive format.

Parameters are named tensors:

- ``entity`` (E, d) and ``relation`` (2R, d): embedding tables; rows ``[R, 2R)`` of
  the relation table are the inverse relations.
- ``projection`` (E, d): per-entity projection vectors, zero-initialized.
- ``context.*``: the context encoder (query, key, value maps and the score vector).
- ``mrl.*``: the set attention block of the meta relation learner.
- ``mlp.*``: the two-layer MLP of the meta relation learner.
- ``hyper.*``: the hyper-network generating task projection vectors.

Archives are zip files of ``.npy`` members (readable with `numpy.load`) plus a
``meta.json`` member. Members are stored uncompressed, in sorted order and with a
fixed timestamp, so identical contents give identical bytes. Parameters live under
``param/``, Adam moments under ``adam_m/`` and ``adam_v/``.
"""

from typing import Any, Iterator, Mapping, Optional
from dataclasses import dataclass, field
from pathlib import Path
import hashlib
import io
import json
import zipfile
import numpy as np
from .errors import CheckpointError
from .tensor import AdamState, Tensor, derive_rng


FORMAT_VERSION = 1
"""Version of the archive layout, stored in ``meta.json``."""
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def transe_init(rng: np.random.Generator, rows: int, dim: int, /) -> np.ndarray:
    """Uniform rows in ``±6/sqrt(dim)``, normalized to unit length."""
    bound = 6.0 / np.sqrt(dim)
    table = rng.uniform(-bound, bound, size=(rows, dim))
    norms = np.linalg.norm(table, axis=1, keepdims=True)
    return table / np.where(norms == 0, 1.0, norms)


def parameter_shapes(
    num_entities: int, num_relation_ids: int, dim: int, /
) -> dict[str, tuple[int, ...]]:
    """Name to shape of every parameter, in canonical order."""
    d, d2 = dim, 2 * dim
    shapes = dict(
        entity=(num_entities, d),
        relation=(num_relation_ids, d),
        projection=(num_entities, d),
    )
    shapes |= {
        "context.query": (d2, d2),
        "context.key": (d2, d2),
        "context.value": (d2, d2),
        "context.score": (d2,),
    }
    for name in ("query", "key", "value", "output", "ff1.weight", "ff2.weight"):
        shapes[f"mrl.{name}"] = (d2, d2)
    for name in ("ff1.bias", "ff2.bias", "norm1.gamma", "norm1.beta", "norm2.gamma",
                 "norm2.beta"):
        shapes[f"mrl.{name}"] = (d2,)
    shapes |= {
        "mlp.hidden.weight": (d2, d2),
        "mlp.hidden.bias": (d2,),
        "mlp.output.weight": (d2, d),
        "mlp.output.bias": (d,),
        "hyper.weight": (d, d),
        "hyper.bias": (d,),
    }
    return shapes


class ParameterStore:
    """Named trainable tensors."""

    def __init__(self, tensors: Mapping[str, Tensor], /):
        """Initialize the store. Every tensor is marked as requiring gradients."""
        self._tensors: dict[str, Tensor] = dict()
        for name, tensor in tensors.items():
            if not isinstance(tensor, Tensor):
                tensor = Tensor(tensor)
            tensor.name = name
            self._tensors[name] = tensor.requires_grad_()

    @classmethod
    def initialize(
        cls,
        num_entities: int,
        num_relation_ids: int,
        dim: int,
        seed: int,
        /,
        *,
        entity: Optional[np.ndarray] = None,
        relation: Optional[np.ndarray] = None,
    ) -> "ParameterStore":
        """Fresh parameters; embedding tables may come from pre-training.

        Raises:
            ValueError: If given tables do not have the expected shapes.
        """
        arrays = dict()
        for name, shape in parameter_shapes(num_entities, num_relation_ids, dim).items():
            rng = derive_rng(seed, "init", name)
            if name in ("entity", "relation"):
                arrays[name] = transe_init(rng, *shape)
            elif name == "projection" or name.endswith(("bias", "beta")):
                arrays[name] = np.zeros(shape)
            elif name.endswith("gamma"):
                arrays[name] = np.ones(shape)
            elif name == "context.score":
                arrays[name] = rng.uniform(-0.1, 0.1, size=shape)
            else:
                arrays[name] = _xavier(rng, shape)
        for name, table in (("entity", entity), ("relation", relation)):
            if table is None:
                continue
            if table.shape != arrays[name].shape:
                raise ValueError(
                    f"Pretrained {name} table {table.shape} does not match"
                    f" {arrays[name].shape}"
                )
            arrays[name] = np.array(table, dtype=np.float64)
        return cls({k: Tensor(v) for k, v in arrays.items()})

    @property
    def dim(self) -> int:
        """Embedding size d."""
        return self._tensors["entity"].shape[1]

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        """(name, tensor) pairs."""
        return self._tensors.items()

    @property
    def tensors(self) -> dict[str, Tensor]:
        """The underlying name to tensor mapping."""
        return self._tensors

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of every parameter's values."""
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_snapshot(self, arrays: Mapping[str, np.ndarray], /):
        """Overwrite values in place from a `snapshot`."""
        for name, array in arrays.items():
            target = self._tensors[name]
            if target.shape != array.shape:
                raise CheckpointError(
                    f"Tensor {name!r} has shape {array.shape}, expected {target.shape}"
                )
            target.data[...] = array

    def __repr__(self):
        """Object repr."""
        return f"<{self.__class__.__qualname__} {len(self)} tensors, d={self.dim}>"


def vocabulary_digest(names) -> str:
    """A short digest of an ordered name list."""
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()[:16]


def save_arrays(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any], /):
    """Write an archive of named arrays and a JSON-serializable *meta* mapping."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta) | dict(format_version=FORMAT_VERSION)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(arrays):
            buffer = io.BytesIO()
            np.lib.format.write_array(
                buffer, np.ascontiguousarray(arrays[name]), allow_pickle=False
            )
            archive.writestr(zipfile.ZipInfo(f"{name}.npy", _FIXED_DATE), buffer.getvalue())
        archive.writestr(
            zipfile.ZipInfo("meta.json", _FIXED_DATE),
            json.dumps(meta, indent=1, sort_keys=True),
        )


def load_arrays(path, /) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read an archive written by `save_arrays`.

    Raises:
        CheckpointError: If the file is missing, corrupt or of another version.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"No such checkpoint: {str(path)!r}")
    try:
        with zipfile.ZipFile(path) as archive:
            meta = json.loads(archive.read("meta.json"))
            arrays = dict()
            for member in archive.namelist():
                if member.endswith(".npy"):
                    with archive.open(member) as file:
                        arrays[member.removesuffix(".npy")] = np.lib.format.read_array(
                            file, allow_pickle=False
                        )
    except (zipfile.BadZipFile, KeyError, ValueError) as err:
        raise CheckpointError(f"Corrupt checkpoint {str(path)!r}: {err}") from err
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"Checkpoint {str(path)!r} has format version {version!r},"
            f" expected {FORMAT_VERSION}"
        )
    return arrays, meta


@dataclass
class Checkpoint:
    """Parameters, optimizer state and training progress."""

    params: dict[str, np.ndarray]
    """Parameter values by name."""
    optimizer: AdamState = field(default_factory=AdamState)
    step: int = 0
    """Outer step at which the parameters were captured."""
    history: list[tuple[int, float]] = field(default_factory=list)
    """(step, validation MRR) pairs."""
    config: dict[str, Any] = field(default_factory=dict)
    """Snapshot of the training configuration."""
    meta: dict[str, Any] = field(default_factory=dict)
    """Vocabulary digests, data location and config fingerprint."""

    def store(self) -> ParameterStore:
        """A `ParameterStore` holding copies of the parameters."""
        return ParameterStore({k: Tensor(v) for k, v in self.params.items()})

    @property
    def best_mrr(self) -> Optional[float]:
        """Highest validation MRR in the history."""
        return max((mrr for _, mrr in self.history), default=None)


def save_checkpoint(checkpoint: Checkpoint, path, /):
    """Write *checkpoint* to *path*."""
    arrays = {f"param/{k}": v for k, v in checkpoint.params.items()}
    arrays |= {f"adam_m/{k}": v for k, v in checkpoint.optimizer.first_moment.items()}
    arrays |= {f"adam_v/{k}": v for k, v in checkpoint.optimizer.second_moment.items()}
    adam = checkpoint.optimizer
    meta = dict(
        kind="checkpoint",
        step=checkpoint.step,
        history=[[s, m] for s, m in checkpoint.history],
        config=checkpoint.config,
        adam=dict(step=adam.step, beta1=adam.beta1, beta2=adam.beta2, eps=adam.eps),
    ) | checkpoint.meta
    save_arrays(path, arrays, meta)


def load_checkpoint(path, /) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`.

    Raises:
        CheckpointError: If the file is not a valid checkpoint or tensors are missing.
    """
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{str(path)!r} is not a training checkpoint")
    params = {k.removeprefix("param/"): v for k, v in arrays.items() if k.startswith("param/")}
    missing = [
        name
        for name in parameter_shapes(1, 1, 1)
        if name not in params
    ]
    if missing:
        raise CheckpointError(f"Checkpoint {str(path)!r} is missing tensors {missing}")
    adam = meta.get("adam", dict())
    optimizer = AdamState(
        first_moment={
            k.removeprefix("adam_m/"): v for k, v in arrays.items() if k.startswith("adam_m/")
        },
        second_moment={
            k.removeprefix("adam_v/"): v for k, v in arrays.items() if k.startswith("adam_v/")
        },
        step=adam.get("step", 0),
        beta1=adam.get("beta1", 0.9),
        beta2=adam.get("beta2", 0.999),
        eps=adam.get("eps", 1e-8),
    )
    extra = {
        k: v
        for k, v in meta.items()
        if k not in ("kind", "step", "history", "config", "adam", "format_version")
    }
    return Checkpoint(
        params=params,
        optimizer=optimizer,
        step=meta.get("step", 0),
        history=[(int(s), float(m)) for s, m in meta.get("history", [])],
        config=meta.get("config", dict()),
        meta=extra,
    )


__all__ = (
    "FORMAT_VERSION",
    "ParameterStore",
    "Checkpoint",
    "parameter_shapes",
    "transe_init",
    "vocabulary_digest",
    "save_arrays",
    "load_arrays",
    "save_checkpoint",
    "load_checkpoint",
)

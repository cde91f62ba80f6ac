"""Per-class autoencoder blocks with a private and a weight-shared branch.

Each of the C blocks owns an *intra* branch (encoder -> latent -> decoder,
all RELU) and an *inter* branch of the same shape whose latent layer is one
``DenseLayer`` object referenced by every block.  The two decoder outputs
are concatenated and mapped back to N dimensions by a linear fusion layer;
that fused vector is the block's embedding.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyPartition, ValidationError
from .nn import (
    CHECKPOINT_VERSION,
    Activation,
    Adam,
    DenseLayer,
    LossBreakdown,
    cosine_loss,
    cosine_terms,
    kl_sparsity,
    kl_units,
)


@dataclass
class EdrlConfig:
    hidden_multiplier: float = 2.0
    latent_multiplier: float = 2.0
    kl_weight: float = 0.1
    rho: float = 0.05
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 10
    min_delta: float = 1e-4
    learning_rate: float = 1e-3
    seed: int = 0
    share_latent: bool = True
    use_concat_latents: bool = False

    def __post_init__(self):
        for name in ("hidden_multiplier", "latent_multiplier", "batch_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.kl_weight < 0 or self.patience < 0 or self.min_delta < 0:
            raise ValidationError("kl_weight, patience and min_delta must be non-negative")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError("rho must lie in (0, 1)")

    def dims(self, N: int) -> tuple:
        h = max(1, int(round(self.hidden_multiplier * N)))
        latent = max(1, int(round(self.latent_multiplier * h)))
        return h, latent


@dataclass(eq=False)
class BranchAutoencoder:
    encoder: DenseLayer
    latent: DenseLayer
    decoder: DenseLayer

    @classmethod
    def init(cls, N, h, latent_dim, rng, latent_layer=None):
        enc = DenseLayer.init(N, h, Activation.RELU, rng)
        lat = latent_layer if latent_layer is not None else \
            DenseLayer.init(h, latent_dim, Activation.RELU, rng)
        dec = DenseLayer.init(latent_dim, h, Activation.RELU, rng)
        return cls(enc, lat, dec)

    def layers(self):
        return [self.encoder, self.latent, self.decoder]

    def forward_cached(self, x):
        hidden, c_enc = self.encoder.forward_cached(x)
        z, c_lat = self.latent.forward_cached(hidden)
        out, c_dec = self.decoder.forward_cached(z)
        return z, out, (c_enc, c_lat, c_dec)

    def backward(self, caches, grad_out, grad_z):
        c_enc, c_lat, c_dec = caches
        g, gw_dec, gb_dec = self.decoder.backward(c_dec, grad_out)
        g, gw_lat, gb_lat = self.latent.backward(c_lat, g + grad_z)
        _, gw_enc, gb_enc = self.encoder.backward(c_enc, g)
        return [gw_enc, gb_enc, gw_lat, gb_lat, gw_dec, gb_dec]


@dataclass
class BlockOutputs:
    z_intra: np.ndarray
    z_inter: np.ndarray
    fused: np.ndarray


@dataclass(eq=False)
class EmotionBlock:
    intra: BranchAutoencoder
    inter: BranchAutoencoder
    fusion: DenseLayer
    kl_weight: float = 0.1
    rho: float = 0.05

    @property
    def N(self) -> int:
        return self.fusion.out_dim

    def layers(self):
        return self.intra.layers() + self.inter.layers() + [self.fusion]

    def parameters(self) -> list:
        return [p for layer in self.layers() for p in layer.parameters()]

    def _forward_cached(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.N:
            raise DimensionMismatch(f"block expects n x {self.N} input, got {x.shape}")
        z_i, d_i, c_i = self.intra.forward_cached(x)
        z_e, d_e, c_e = self.inter.forward_cached(x)
        fused, c_f = self.fusion.forward_cached(np.hstack([d_i, d_e]))
        return BlockOutputs(z_i, z_e, fused), (c_i, c_e, c_f, d_i.shape[1])

    def forward(self, x) -> BlockOutputs:
        return self._forward_cached(x)[0]

    def loss_and_grad(self, x):
        """Block loss on ``x`` and gradients aligned with ``parameters()``."""
        out, (c_i, c_e, c_f, split) = self._forward_cached(x)
        cos, g_fused = cosine_loss(x, out.fused)
        kl_i, g_zi = kl_sparsity(out.z_intra, self.rho)
        kl_e, g_ze = kl_sparsity(out.z_inter, self.rho)
        g_cat, gw_f, gb_f = self.fusion.backward(c_f, g_fused)
        grads = self.intra.backward(c_i, g_cat[:, :split], self.kl_weight * g_zi)
        grads += self.inter.backward(c_e, g_cat[:, split:], self.kl_weight * g_ze)
        grads += [gw_f, gb_f]
        return cos + self.kl_weight * (kl_i + kl_e), grads

    def loss_terms(self, x) -> np.ndarray:
        """Additive pieces of the block loss: one per row, then one per latent unit."""
        x = np.asarray(x, dtype=np.float64)
        out = self.forward(x)
        return np.concatenate([cosine_terms(x, out.fused) / x.shape[0],
                               self.kl_weight * kl_units(out.z_intra, self.rho),
                               self.kl_weight * kl_units(out.z_inter, self.rho)])

    def embedding(self, x, concat_latents: bool = False) -> np.ndarray:
        out = self.forward(x)
        if concat_latents:
            return np.hstack([out.z_intra, out.z_inter])
        return out.fused


def block_forward(block: EmotionBlock, x):
    """``(z_intra, z_inter, fused)`` for a batch."""
    out = block.forward(x)
    return out.z_intra, out.z_inter, out.fused


def block_loss(x, outputs, config: EdrlConfig) -> LossBreakdown:
    """Loss of a block given its outputs on ``x``.

    ``outputs`` is either a ``BlockOutputs`` or the tuple from
    ``block_forward``.
    """
    if not isinstance(outputs, BlockOutputs):
        outputs = BlockOutputs(*outputs)
    cos, _ = cosine_loss(x, outputs.fused)
    kl = kl_sparsity(outputs.z_intra, config.rho)[0] + kl_sparsity(outputs.z_inter, config.rho)[0]
    return LossBreakdown(cos, kl, config.kl_weight)


@dataclass(eq=False)
class EdrlModel:
    blocks: list
    N: int
    config: EdrlConfig
    shared_latent: DenseLayer | None
    training_history: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False
    final_train_loss: list | None = None

    @property
    def C(self) -> int:
        return len(self.blocks)

    def unique_parameters(self) -> list:
        seen, out = set(), []
        for block in self.blocks:
            for p in block.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def embed(self, x) -> list:
        return embed(self, x)

    def validation_loss(self, per_class_val) -> float:
        return float(sum(_loss_only(b, x) for b, x in zip(self.blocks, per_class_val)))

    def to_dict(self) -> dict:
        shared_id = "shared_latent"
        blocks = []
        for b in self.blocks:
            def branch(br, is_inter):
                d = {"encoder": br.encoder.to_dict(), "decoder": br.decoder.to_dict()}
                if is_inter and self.shared_latent is not None:
                    d["latent"] = {"$ref": shared_id}
                else:
                    d["latent"] = br.latent.to_dict()
                return d
            blocks.append({"intra": branch(b.intra, False), "inter": branch(b.inter, True),
                           "fusion": b.fusion.to_dict()})
        shared = {} if self.shared_latent is None else {shared_id: self.shared_latent.to_dict()}
        return {"format": "edrl", "version": CHECKPOINT_VERSION, "N": self.N, "C": self.C,
                "config": asdict(self.config), "shared": shared, "blocks": blocks,
                "training_history": self.training_history, "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early}

    @classmethod
    def from_dict(cls, d) -> "EdrlModel":
        if d.get("format") != "edrl" or d.get("version") != CHECKPOINT_VERSION:
            raise ValidationError("not a version-1 EDRL checkpoint")
        config = EdrlConfig(**d["config"])
        shared = {k: DenseLayer.from_dict(v) for k, v in d["shared"].items()}

        def layer(spec):
            return shared[spec["$ref"]] if "$ref" in spec else DenseLayer.from_dict(spec)

        blocks = []
        for bd in d["blocks"]:
            branches = [BranchAutoencoder(layer(bd[k]["encoder"]), layer(bd[k]["latent"]),
                                          layer(bd[k]["decoder"])) for k in ("intra", "inter")]
            blocks.append(EmotionBlock(*branches, DenseLayer.from_dict(bd["fusion"]),
                                       config.kl_weight, config.rho))
        return cls(blocks, d["N"], config, shared.get("shared_latent"),
                   list(d.get("training_history", [])), d.get("best_epoch"),
                   bool(d.get("stopped_early", False)))

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "EdrlModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _loss_only(block: EmotionBlock, x) -> float:
    out = block.forward(x)
    cos, _ = cosine_loss(x, out.fused)
    kl = kl_sparsity(out.z_intra, block.rho)[0] + kl_sparsity(out.z_inter, block.rho)[0]
    return cos + block.kl_weight * kl


def build_edrl(N: int, C: int, config: EdrlConfig | None = None) -> EdrlModel:
    """Initialise C blocks for N-dimensional input.

    With ``config.share_latent`` (the default) every block's inter-branch
    latent layer is the same object.  With sharing disabled each block gets
    an independent copy of the same initial latent layer, which makes the
    two settings directly comparable.
    """
    config = config or EdrlConfig()
    if C < 2:
        raise ValidationError(f"need at least 2 emotion blocks, got C={C}")
    if N < 1:
        raise ValidationError(f"input dimension must be positive, got N={N}")
    h, latent_dim = config.dims(N)
    rng = np.random.default_rng(config.seed)
    shared = DenseLayer.init(h, latent_dim, Activation.RELU, rng)
    blocks = []
    for _ in range(C):
        inter_latent = shared if config.share_latent else copy.deepcopy(shared)
        intra = BranchAutoencoder.init(N, h, latent_dim, rng)
        inter = BranchAutoencoder.init(N, h, latent_dim, rng, latent_layer=inter_latent)
        fusion = DenseLayer.init(2 * h, N, Activation.LINEAR, rng)
        blocks.append(EmotionBlock(intra, inter, fusion, config.kl_weight, config.rho))
    return EdrlModel(blocks, N, config, shared if config.share_latent else None)


def _check_partitions(model, parts, name):
    if len(parts) != model.C:
        raise ValidationError(f"{name}: expected {model.C} class partitions, got {len(parts)}")
    out = []
    for c, x in enumerate(parts):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptyPartition(f"{name}: class {c} has no rows")
        if x.shape[1] != model.N:
            raise DimensionMismatch(f"{name}: class {c} has {x.shape[1]} columns, "
                                    f"expected {model.N}")
        out.append(x)
    return out


def train_edrl(model: EdrlModel, per_class_train, per_class_val,
               config: EdrlConfig | None = None) -> EdrlModel:
    """Alternating per-block training with early stopping, in place.

    Every epoch visits the blocks in class order; block c runs one pass of
    shuffled minibatches over its own class rows and updates all of its
    parameters, including the shared latent layer.  Validation loss is the
    sum of each block's loss on its own class's validation rows.  Training
    stops once the loss has failed to improve by ``min_delta`` for
    ``patience`` epochs (``patience=0`` stops at the first such epoch) and
    the parameters of the lowest-validation epoch are restored.
    """
    config = config or model.config
    train = _check_partitions(model, per_class_train, "train")
    val = _check_partitions(model, per_class_val, "validation")
    rng = np.random.default_rng([config.seed, 1])
    optimizer = Adam(learning_rate=config.learning_rate)
    params = model.unique_parameters()

    def train_loss():
        return [_loss_only(b, x) for b, x in zip(model.blocks, train)]

    history = [{"epoch": 0, "train": train_loss(),
                "val": [_loss_only(b, x) for b, x in zip(model.blocks, val)]}]
    history[0]["val_total"] = float(sum(history[0]["val"]))
    best_val = history[0]["val_total"]
    best_params = [p.copy() for p in params]
    best_epoch = 0
    reference = best_val
    wait = 0
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        epoch_train = []
        for block, x in zip(model.blocks, train):
            order = rng.permutation(x.shape[0])
            total = 0.0
            for start in range(0, x.shape[0], config.batch_size):
                xb = x[order[start:start + config.batch_size]]
                loss, grads = block.loss_and_grad(xb)
                optimizer.step(block.parameters(), grads)
                total += loss * xb.shape[0]
            epoch_train.append(total / x.shape[0])
        val_losses = [_loss_only(b, xv) for b, xv in zip(model.blocks, val)]
        val_total = float(sum(val_losses))
        history.append({"epoch": epoch, "train": epoch_train, "val": val_losses,
                        "val_total": val_total})

        if val_total < best_val:
            best_val, best_epoch = val_total, epoch
            best_params = [p.copy() for p in params]
        if val_total < reference - config.min_delta:
            reference = val_total
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                stopped_early = True
                break

    for p, saved in zip(params, best_params):
        p[...] = saved
    model.training_history = history
    model.best_epoch = best_epoch
    model.stopped_early = stopped_early
    model.final_train_loss = train_loss()
    return model


def embed(model: EdrlModel, x) -> list:
    """Every block's embedding of every row of ``x`` (class-agnostic)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.N:
        raise DimensionMismatch(f"expected {model.N} columns, got {x.shape[1]}")
    return [b.embedding(x, model.config.use_concat_latents) for b in model.blocks]

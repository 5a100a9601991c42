"""Encoder + decoder assembly with one parameter registry.

The model owns the flat parameter vector used by the optimizer and the
checkpoint format; encoder and decoder tensors alias into it through the
shared registry, so load_vector() swaps weights for both at once.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .decoder import Decoder, DecoderConfig, total_loss
from .encoder import CONNECTED, Encoder, EncoderConfig
from .params import ParamSet
from .rng import Rng


class Model:
    def __init__(self, encoder_cfg: EncoderConfig, decoder_cfg: DecoderConfig,
                 n_vars: int, n_feats: int, init_seed: int = 0):
        self.encoder_cfg = encoder_cfg
        self.decoder_cfg = decoder_cfg
        self.n_vars = n_vars
        self.n_feats = n_feats
        self.init_seed = int(init_seed)
        self.params = ParamSet()
        rng = Rng(self.init_seed).substream("model-init")
        self.encoder = Encoder(self.params, encoder_cfg, n_vars, n_feats, rng)
        self.decoder = Decoder(self.params, decoder_cfg, n_vars, n_feats, rng)

    # -- persistence ---------------------------------------------------------

    def config_dict(self) -> dict:
        return {
            "encoder": self.encoder_cfg.to_dict(),
            "decoder": self.decoder_cfg.to_dict(),
            "n_vars": self.n_vars,
            "n_feats": self.n_feats,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_config(cls, config: dict) -> "Model":
        return cls(
            encoder_cfg=EncoderConfig(**config["encoder"]),
            decoder_cfg=DecoderConfig(**config["decoder"]),
            n_vars=int(config["n_vars"]),
            n_feats=int(config["n_feats"]),
            init_seed=int(config.get("init_seed", 0)),
        )

    # -- forward paths -------------------------------------------------------

    def loss_on_batch(self, values: np.ndarray, rng: Rng | None = None,
                      noise: np.ndarray | None = None, hard: bool = False
                      ) -> tuple[Tensor, Tensor, Tensor]:
        """Training objective on a [B,T,N,M] batch.

        With an rng (or explicit noise), the decoder consumes a relaxed
        Gumbel-Softmax sample of the edge posterior so edge beliefs receive
        gradients; without either, it consumes the soft posterior itself
        (the deterministic validation/scoring path). ``hard`` discretizes
        that sample in the forward pass while keeping the relaxed gradient
        (straight-through), so the decoder trains on 0/1 edges. The
        smoothness term always acts on the soft posterior, the same object
        the correlation change score reads.
        Returns (total, reconstruction, smoothness) scalar tensors.
        """
        x = Tensor(np.asarray(values, dtype=np.float64))
        probs, sample = self.encoder.encode(x, rng=rng, noise=noise, hard=hard)
        edges = sample if sample is not None else probs
        a = edges[..., CONNECTED]
        predictions, _ = self.decoder.teacher_forced(x, a)
        return total_loss(x, predictions, probs[..., CONNECTED],
                          self.decoder_cfg.sigma_sq, self.decoder_cfg.lambda_smooth)

    def posterior(self, values: np.ndarray) -> np.ndarray:
        """Soft edge posterior [B,T,P,K] as plain numpy (no sampling)."""
        x = Tensor(np.asarray(values, dtype=np.float64))
        probs, _ = self.encoder.encode(x)
        return probs.data

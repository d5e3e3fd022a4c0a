"""Grouped vector quantization against exhaustive nearest-neighbor oracles."""

import numpy as np
import pytest
import torch
from torch import nn

from videobc.errors import ConfigurationError, NumericError
from videobc.latentact import (GroupedVectorQuantizer, LatentActionConfig,
                               ParallelQuantizer, make_quantizer, vq_quantize)


def make_identity_vq(groups, entries, embed_dim, embeddings=None):
    """Quantizer whose projections are fixed to the identity."""
    dim = groups * embed_dim
    vq = GroupedVectorQuantizer(latent_dim=dim, groups=groups,
                                entries=entries, embed_dim=embed_dim)
    with torch.no_grad():
        vq.proj_in.weight.copy_(torch.eye(dim))
        vq.proj_in.bias.zero_()
        vq.proj_out.weight.copy_(torch.eye(dim))
        vq.proj_out.bias.zero_()
        if embeddings is not None:
            vq.embeddings.copy_(embeddings)
    return vq


def exhaustive_nearest(h, embeddings):
    """Loop-based nearest-embedding oracle (squared distance, first wins)."""
    b, groups, _ = h.shape
    out = np.zeros((b, groups), dtype=np.int64)
    for i in range(b):
        for g in range(groups):
            best, best_d = 0, np.inf
            for k in range(embeddings.shape[1]):
                d = float(((h[i, g] - embeddings[g, k]) ** 2).sum())
                if d < best_d - 1e-15:
                    best, best_d = k, d
            out[i, g] = best
    return out


class TestNearestNeighbor:
    def test_two_entry_hand_example(self):
        emb = torch.tensor([[[0.0, 0.0], [1.0, 1.0]]])
        vq = make_identity_vq(1, 2, 2, emb)
        q = vq_quantize(vq, torch.tensor([[0.1, 0.2]]))
        assert q.indices.tolist() == [[0]]
        assert torch.allclose(q.quantized_pre, torch.zeros(1, 1, 2))

    def test_thousand_random_vectors_match_oracle(self):
        torch.manual_seed(0)
        vq = GroupedVectorQuantizer(latent_dim=24, groups=3, entries=7,
                                    embed_dim=5)
        z = torch.randn(1000, 24)
        q = vq_quantize(vq, z)
        h = vq.proj_in(z).view(1000, 3, 5).detach().numpy()
        ref = exhaustive_nearest(h, vq.embeddings.detach().numpy())
        assert np.array_equal(q.indices.numpy(), ref)

    def test_exact_embedding_zero_commitment(self):
        torch.manual_seed(1)
        emb = torch.randn(2, 4, 3)
        vq = make_identity_vq(2, 4, 3, emb)
        z = torch.cat([emb[0, 2], emb[1, 1]]).unsqueeze(0)
        q = vq_quantize(vq, z)
        assert q.indices.tolist() == [[2, 1]]
        assert float(q.commitment_loss.detach()) == 0.0
        assert torch.equal(q.quantized_pre.flatten(), z.flatten())

    def test_idempotent_under_identity_projections(self):
        torch.manual_seed(2)
        emb = torch.randn(2, 8, 4)
        vq = make_identity_vq(2, 8, 4, emb)
        z = torch.randn(64, 8)
        first = vq_quantize(vq, z)
        second = vq_quantize(vq, first.quantized_pre.flatten(1).detach())
        assert torch.equal(first.indices, second.indices)

    def test_quantized_values_are_exact_codebook_rows(self):
        torch.manual_seed(3)
        vq = GroupedVectorQuantizer(latent_dim=16, groups=4, entries=6,
                                    embed_dim=4)
        q = vq_quantize(vq, torch.randn(32, 16))
        for i in range(32):
            for g in range(4):
                row = vq.embeddings[g, q.indices[i, g]]
                assert torch.equal(q.quantized_pre[i, g].detach(), row.detach())


class TestStraightThrough:
    def test_gradient_copied_verbatim(self):
        torch.manual_seed(4)
        vq = GroupedVectorQuantizer(latent_dim=12, groups=2, entries=5,
                                    embed_dim=6)
        z = torch.randn(7, 12, requires_grad=True)
        q = vq_quantize(vq, z)
        q.pre_q.retain_grad()
        q.quantized_pre.retain_grad()
        weights = torch.randn_like(q.quantized_pre)
        (weights * q.quantized_pre).sum().backward()
        assert torch.equal(q.pre_q.grad, q.quantized_pre.grad)
        assert torch.equal(q.quantized_pre.grad, weights)

    def test_embeddings_receive_no_gradient_from_st_path(self):
        torch.manual_seed(5)
        vq = GroupedVectorQuantizer(latent_dim=12, groups=2, entries=5,
                                    embed_dim=6)
        q = vq_quantize(vq, torch.randn(7, 12))
        q.z_vq.sum().backward()
        assert vq.embeddings.grad is None or \
            float(vq.embeddings.grad.abs().sum()) == 0.0


class TestPerplexity:
    def test_bounds_on_random_batches(self):
        torch.manual_seed(6)
        vq = GroupedVectorQuantizer(latent_dim=8, groups=2, entries=4,
                                    embed_dim=4)
        for _ in range(20):
            q = vq_quantize(vq, torch.randn(50, 8))
            assert 1.0 <= q.perplexity <= 4.0 ** 2 + 1e-9

    def test_single_tuple_gives_one(self):
        torch.manual_seed(7)
        vq = GroupedVectorQuantizer(latent_dim=8, groups=2, entries=4,
                                    embed_dim=4)
        z = torch.zeros(30, 8)
        q = vq_quantize(vq, z)
        assert q.perplexity == pytest.approx(1.0, abs=1e-9)

    def test_two_balanced_tuples_give_two(self):
        emb = torch.zeros(1, 2, 2)
        emb[0, 0] = torch.tensor([-1.0, -1.0])
        emb[0, 1] = torch.tensor([1.0, 1.0])
        vq = make_identity_vq(1, 2, 2, emb)
        z = torch.tensor([[-1.0, -1.0], [1.0, 1.0]] * 5)
        q = vq_quantize(vq, z)
        assert q.perplexity == pytest.approx(2.0, abs=1e-9)


class TestDeadCodeReinit:
    def test_unused_entries_are_moved(self):
        torch.manual_seed(8)
        emb = torch.zeros(1, 3, 2)
        emb[0, 0] = torch.tensor([0.0, 0.0])
        emb[0, 1] = torch.tensor([1.0, 1.0])
        emb[0, 2] = torch.tensor([50.0, 50.0])  # never selected
        vq = make_identity_vq(1, 3, 2, emb)
        z = torch.tensor([[0.1, 0.0], [0.9, 1.0]])
        reinits = 0
        for _ in range(4):
            q = vq_quantize(vq, z)
            reinits += vq.note_usage(q, dead_steps=3)
        assert reinits == 1
        # the dead entry now sits on one of the batch pre-q vectors
        moved = vq.embeddings[0, 2].detach()
        assert any(torch.allclose(moved, row) for row in z)

    def test_live_entries_untouched(self):
        torch.manual_seed(9)
        vq = GroupedVectorQuantizer(latent_dim=8, groups=2, entries=4,
                                    embed_dim=4)
        before = vq.embeddings.detach().clone()
        z = torch.randn(200, 8)
        q = vq_quantize(vq, z)
        used = [set(q.indices[:, g].tolist()) for g in range(2)]
        for _ in range(5):
            vq.note_usage(vq_quantize(vq, z), dead_steps=3)
        for g in range(2):
            for k in used[g]:
                assert torch.equal(vq.embeddings[g, k].detach(), before[g, k])


class TestValidationAndVariants:
    def test_nonfinite_rejected(self):
        vq = GroupedVectorQuantizer(latent_dim=8, groups=2, entries=4,
                                    embed_dim=4)
        z = torch.full((2, 8), float("nan"))
        with pytest.raises(NumericError):
            vq_quantize(vq, z)

    def test_invalid_shape_rejected(self):
        with pytest.raises(ConfigurationError):
            GroupedVectorQuantizer(latent_dim=8, groups=0, entries=4,
                                   embed_dim=4)
        with pytest.raises(ConfigurationError):
            GroupedVectorQuantizer(latent_dim=8, groups=2, entries=1,
                                   embed_dim=4)

    def test_parallel_quantizer_concatenates_indices(self):
        cfg = LatentActionConfig(parallel_codebooks=2, groups=3, entries=4,
                                 embed_dim=4, latent_dim=16)
        vq = make_quantizer(cfg)
        assert isinstance(vq, ParallelQuantizer)
        q = vq(torch.randn(6, 16))
        assert q.indices.shape == (6, 6)
        assert vq.note_usage(q, dead_steps=10) == 0

    def test_single_codebook_factory(self):
        cfg = LatentActionConfig(parallel_codebooks=1)
        assert isinstance(make_quantizer(cfg), GroupedVectorQuantizer)

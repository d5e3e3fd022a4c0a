"""Finite-difference gradient trials for every training loss.

Losses containing stop-gradients or straight-through estimators are not
differentiable as written, so finite differences are taken over a mirror
function: the quantities the production loss treats as constants (selected
embeddings, frozen indices, clustering targets) are captured once at the
base parameters. The mirror equals the production loss at the base point
and its true gradient equals the production autograd gradient there.
"""

import numpy as np
import torch
import torch.nn.functional as F

from videobc.features import (contrastive_recon_loss_from_aug,
                              sinkhorn_targets, temporal_assoc_loss_from_feats)
from videobc.latentact import (GroupedVectorQuantizer,
                               latent_action_pretrain_loss)
from videobc.nets import (ActionDecoder, ContrastiveHead, FeatureEncoder,
                          LatentActionPredictor, LatentPolicy, PrototypeBank,
                          ReconstructionDecoder, WorldModel, mlp)
from videobc.online import bc_loss, finetune_loss

from conftest import analytic_gradients, fd_gradients, max_relative_error


# 1e-6 keeps the central-difference step below the enforced kink margins
# while 64-bit precision keeps cancellation error near 1e-10
def _check(params, production_fn, mirror_fn, eps=1e-6):
    analytic = analytic_gradients(params, production_fn)
    numeric = fd_gradients(params, mirror_fn, eps)
    return max_relative_error(analytic, numeric)


KINK_MARGIN = 1e-4


def _min_preactivation(modules, run_fn) -> float:
    """Smallest |output| over all affine layers while running ``run_fn``.

    A value near zero means some ReLU input sits on its kink, where finite
    differences of the piecewise-linear network are unreliable; such
    instances are rejected and resampled.
    """
    record = []

    def hook(_mod, _inp, out):
        record.append(float(out.detach().abs().min()))

    handles = [m.register_forward_hook(hook) for mod in modules
               for m in mod.modules()
               if isinstance(m, (torch.nn.Linear, torch.nn.Conv2d,
                                 torch.nn.ConvTranspose2d))]
    try:
        with torch.no_grad():
            run_fn()
    finally:
        for h in handles:
            h.remove()
    return min(record)


def trial_contrastive(seed, ds=6, img=8, batch=5, alpha=0.1):
    for attempt in range(50):
        torch.manual_seed(seed + 1000 * attempt)
        f = FeatureEncoder(img, 1, ds, channels=4).double()
        fp = FeatureEncoder(img, 1, ds, channels=4).double()
        head = ContrastiveHead(ds, hidden=8).double()
        dec = ReconstructionDecoder(f, channels=4).double()
        aug1 = torch.rand(batch, 1, img, img, dtype=torch.float64)
        aug2 = torch.rand(batch, 1, img, img, dtype=torch.float64)

        def loss_fn():
            return contrastive_recon_loss_from_aug(aug1, aug2, f, fp, head,
                                                   dec, alpha)

        if _min_preactivation([f, head, dec], loss_fn) > KINK_MARGIN:
            break
    else:
        raise AssertionError("could not find a kink-safe instance")
    params = (list(f.parameters()) + list(head.parameters())
              + list(dec.parameters()))
    err = _check(params, loss_fn, loss_fn)
    assert all(p.grad is None for p in fp.parameters())
    return err


def trial_temporal(seed, ds=6, img=8, batch=5, protos=4):
    for attempt in range(50):
        torch.manual_seed(seed + 1000 * attempt)
        f = FeatureEncoder(img, 1, ds, channels=4).double()
        fp = FeatureEncoder(img, 1, ds, channels=4).double()
        bank = PrototypeBank(protos, ds, 0.1).double()
        u = mlp([ds, 8, ds]).double()
        x = torch.rand(batch, 1, img, img, dtype=torch.float64)
        x_next = torch.rand(batch, 1, img, img, dtype=torch.float64)
        with torch.no_grad():
            targets = sinkhorn_targets(fp(x_next), bank, 3)

        def loss_fn():
            return temporal_assoc_loss_from_feats(f(x), targets, bank, u)

        if _min_preactivation([f, u], loss_fn) > KINK_MARGIN:
            break
    else:
        raise AssertionError("could not find a kink-safe instance")
    params = (list(f.parameters()) + list(u.parameters())
              + list(bank.parameters()))
    err = _check(params, loss_fn, loss_fn)
    assert all(p.grad is None for p in fp.parameters())
    return err


def _boundary_gap(p, vq, s, s_next) -> float:
    """Distance margin between the nearest and second-nearest embedding."""
    with torch.no_grad():
        batch = s.shape[0]
        h = vq.proj_in(p(s, s_next)).view(batch, vq.groups, vq.embed_dim)
        dist = (h.unsqueeze(2) - vq.embeddings.unsqueeze(0)).pow(2).sum(-1)
        gaps = dist.sort(dim=-1).values
        return float((gaps[..., 1] - gaps[..., 0]).min())


def _safe_quantizer_instance(seed, ds, dz, groups, entries, embed_dim, batch,
                             check_fn, margin=1e-3):
    """Networks plus a feature batch whose code selection sits away from
    every decision boundary and whose ReLU inputs sit away from their
    kinks, so tiny parameter perturbations stay within one linear piece."""
    for attempt in range(50):
        torch.manual_seed(seed + 1000 * attempt)
        p = LatentActionPredictor(ds, dz, hidden=8).double()
        w = WorldModel(ds, dz, hidden=8).double()
        vq = GroupedVectorQuantizer(latent_dim=dz, groups=groups,
                                    entries=entries,
                                    embed_dim=embed_dim).double()
        s = torch.randn(batch, ds, dtype=torch.float64)
        s_next = torch.randn(batch, ds, dtype=torch.float64)
        if _boundary_gap(p, vq, s, s_next) <= margin:
            continue
        extra = check_fn(p, vq, w, s, s_next)
        if extra is None:
            continue
        return (p, vq, w, s, s_next) + tuple(extra)
    raise AssertionError("could not find a boundary-safe instance")


def _mirror_constants(p, vq, s, s_next):
    with torch.no_grad():
        b = s.shape[0]
        h0 = vq.proj_in(p(s, s_next)).view(b, vq.groups, vq.embed_dim)
        diff = h0.unsqueeze(2) - vq.embeddings.unsqueeze(0)
        indices0 = diff.pow(2).sum(-1).argmin(-1)
        e0 = torch.gather(
            vq.embeddings.unsqueeze(0).expand(b, -1, -1, -1), 2,
            indices0[..., None, None].expand(-1, -1, 1, vq.embed_dim),
        ).squeeze(2)
    return h0.clone(), e0.clone(), indices0


def trial_eq2(seed, ds=6, dz=8, groups=2, entries=4, embed_dim=3, batch=5):
    def check_fn(p, vq, w, s, s_next):
        def run():
            latent_action_pretrain_loss(s, s_next, p, vq, w)
        if _min_preactivation([p, w], run) > KINK_MARGIN:
            return ()
        return None

    p, vq, w, s, s_next = _safe_quantizer_instance(seed, ds, dz, groups,
                                                   entries, embed_dim, batch,
                                                   check_fn)
    h0, e0, indices0 = _mirror_constants(p, vq, s, s_next)
    lam = vq.commitment
    params = (list(p.parameters()) + list(vq.parameters())
              + list(w.parameters()))

    def production_fn():
        loss, _ = latent_action_pretrain_loss(s, s_next, p, vq, w)
        return loss

    def mirror_fn():
        b = s.shape[0]
        h = vq.proj_in(p(s, s_next)).view(b, vq.groups, vq.embed_dim)
        h_q = h + (e0 - h0)
        z_vq = vq.proj_out(h_q.flatten(1))
        e_sel = torch.gather(
            vq.embeddings.unsqueeze(0).expand(b, -1, -1, -1), 2,
            indices0[..., None, None].expand(-1, -1, 1, vq.embed_dim),
        ).squeeze(2)
        recon = F.mse_loss(w(s, z_vq), s_next)
        codebook = F.mse_loss(h0, e_sel)
        commit = F.mse_loss(h, e0)
        return recon + codebook + lam * commit

    with torch.no_grad():
        gap = float((production_fn() - mirror_fn()).abs())
    assert gap < 1e-12, "mirror must equal the production loss at base"
    return _check(params, production_fn, mirror_fn)


def trial_eq3(seed, discrete, ds=6, dz=8, groups=2, entries=4, embed_dim=3,
              batch=5, beta=0.7, n_actions=5, action_dim=2):
    def check_fn(p, vq, w, s, s_next):
        d = ActionDecoder(dz, n_actions if discrete else action_dim,
                          discrete, hidden=8).double()

        def run():
            z = p(s, s_next)
            d(z)
            q = vq(z)
            w(s, q.z_vq)
        if _min_preactivation([p, w, d], run) > KINK_MARGIN:
            return (d,)
        return None

    p, vq, w, s, s_next, d = _safe_quantizer_instance(
        seed, ds, dz, groups, entries, embed_dim, batch, check_fn)
    h0, e0, _ = _mirror_constants(p, vq, s, s_next)
    rng = np.random.default_rng(seed)
    if discrete:
        actions = rng.integers(0, n_actions, size=batch).tolist()
    else:
        actions = rng.uniform(-0.9, 0.9, size=(batch, action_dim))
    params = (list(p.parameters()) + list(vq.parameters())
              + list(w.parameters()) + list(d.parameters()))

    def production_fn():
        loss, _ = finetune_loss(s, s_next, actions, p, vq, w, d, beta,
                                discrete)
        return loss

    def mirror_fn():
        b = s.shape[0]
        z = p(s, s_next)
        out = d(z)
        if discrete:
            action_loss = F.cross_entropy(out, torch.as_tensor(actions))
        else:
            action_loss = F.mse_loss(
                out, torch.as_tensor(actions, dtype=out.dtype))
        h = vq.proj_in(z).view(b, vq.groups, vq.embed_dim)
        z_vq = vq.proj_out((h + (e0 - h0)).flatten(1))
        return action_loss + beta * F.mse_loss(w(s, z_vq), s_next)

    with torch.no_grad():
        gap = float((production_fn() - mirror_fn()).abs())
    assert gap < 1e-12, "mirror must equal the production loss at base"
    return _check(params, production_fn, mirror_fn)


def trial_bc(seed, ds=6, dz=8, batch=5, quantized=False):
    for attempt in range(50):
        torch.manual_seed(seed + 1000 * attempt)
        p = LatentActionPredictor(ds, dz, hidden=8).double()
        policy = LatentPolicy(ds, dz, hidden=8).double()
        cb = None
        if quantized:
            cb = GroupedVectorQuantizer(latent_dim=dz, groups=2, entries=4,
                                        embed_dim=3).double()
        s = torch.randn(batch, ds, dtype=torch.float64)
        s_next = torch.randn(batch, ds, dtype=torch.float64)

        def loss_fn():
            return bc_loss(s, s_next, p, policy, cb)

        if _min_preactivation([policy], loss_fn) > KINK_MARGIN:
            break
    else:
        raise AssertionError("could not find a kink-safe instance")
    params = list(policy.parameters())

    err = _check(params, loss_fn, loss_fn)
    assert all(q.grad is None for q in p.parameters())
    return err

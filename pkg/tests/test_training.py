import json

import numpy as np
import pytest
import torch

from crsr.errors import ConfigError, NoDataError, StateError
from crsr.imaging import (
    DegradationConfig,
    ImageBatch,
    ImageRole,
    ResampleSpec,
    bicubic_downsample,
    degrade_to_genuine_like,
)
from crsr.losses import LossWeights
from crsr.networks import (
    NetworkConfig,
    NetworkKind,
    build_network,
    forward_cr,
    forward_face_embed,
)
from crsr.training import (
    Ablation,
    _derive_seed,
    Stage,
    TrainingSchedule,
    discriminator_accuracy,
    load_checkpoint,
    save_checkpoint,
    stage1_pretrain_cc,
    stage1_pretrain_sr,
    stage1_train_face_embed,
    stage2_joint_finetune,
)
from crsr import toydata

TINY = NetworkConfig(
    base_channels=8,
    cr_res_blocks=1,
    sr_group_blocks=(1, 1, 1),
    disc_res_blocks=2,
    feat_disc_fc_layers=3,
    embed_dim=16,
)
SCHED = TrainingSchedule(lr=1e-3, batch_size=8, seed=0)


@pytest.fixture(scope="module")
def tiny_corpus():
    hr, labels = toydata.make_toy_faces(3, 6, size=64, seed=5)
    genuine = degrade_to_genuine_like(hr, DegradationConfig(seed=5))
    artificial = bicubic_downsample(hr, ResampleSpec(factor=4))
    return hr, labels, genuine, artificial


@pytest.fixture(scope="module")
def tiny_stage1(tiny_corpus):
    hr, labels, genuine, artificial = tiny_corpus
    sr = stage1_pretrain_sr(SCHED, hr, network_config=TINY, max_steps=40)
    cr, inv_cr, disc, disc_inv = stage1_pretrain_cc(
        SCHED, genuine, artificial, network_config=TINY, max_steps=40
    )
    face = stage1_train_face_embed(SCHED, hr, labels, network_config=TINY, max_steps=40)
    return {
        "sr": sr,
        "cr": cr,
        "inv_cr": inv_cr,
        "disc_cr": disc,
        "disc_inv_cr": disc_inv,
        "face": face,
    }


def clone_params(handle):
    return {k: v.detach().clone() for k, v in handle.parameters.items()}


def params_equal(handle, snapshot):
    return all(torch.equal(v, snapshot[k]) for k, v in handle.parameters.items())


class TestStage1Sr:
    def test_zero_epochs_returns_untrained_net(self, tiny_corpus):
        hr = tiny_corpus[0]
        sched = TrainingSchedule(lr=1e-3, batch_size=8, seed=3, epochs_sr=0)
        net = stage1_pretrain_sr(sched, hr, network_config=TINY)
        torch.manual_seed(_derive_seed(3, "init/sr"))
        reference = build_network(NetworkKind.SR_GEN, TINY)
        assert params_equal(net, clone_params(reference))

    def test_training_reduces_loss(self, tiny_corpus):
        hr = tiny_corpus[0]
        log = []
        stage1_pretrain_sr(SCHED, hr, network_config=TINY, max_steps=60, log_sink=log.append)
        first = log[0]["L_sr"]
        final = np.mean([r["L_sr"] for r in log[-10:]])
        assert final < first

    def test_empty_data_rejected(self):
        empty = ImageBatch(torch.zeros(0, 3, 64, 64), ImageRole.AUX_HR)
        with pytest.raises(NoDataError):
            stage1_pretrain_sr(SCHED, empty, network_config=TINY, max_steps=1)

    def test_identical_seeds_identical_checkpoints(self, tiny_corpus, tmp_path):
        hr = tiny_corpus[0]
        for name in ("a", "b"):
            stage1_pretrain_sr(
                SCHED,
                hr,
                network_config=TINY,
                max_steps=15,
                checkpoint_path=tmp_path / f"{name}.ckpt",
            )
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


class TestStage1Cc:
    def test_zero_epochs_leaves_nets_at_init(self, tiny_corpus):
        _, _, genuine, artificial = tiny_corpus
        sched = TrainingSchedule(lr=1e-3, batch_size=8, seed=4, epochs_cc=0)
        cr, inv_cr, disc, disc_inv = stage1_pretrain_cc(
            sched, genuine, artificial, network_config=TINY
        )
        torch.manual_seed(_derive_seed(4, "init/cr"))
        reference = build_network(NetworkKind.CR_GEN, TINY)
        assert params_equal(cr, clone_params(reference))

    def test_empty_domain_rejected(self, tiny_corpus):
        _, _, genuine, _ = tiny_corpus
        empty = ImageBatch(torch.zeros(0, 3, 16, 16), ImageRole.ARTIFICIAL_LR)
        with pytest.raises(NoDataError):
            stage1_pretrain_cc(SCHED, genuine, empty, network_config=TINY, max_steps=1)

    def test_identical_domains_leave_discriminator_blind(self):
        # Both domains are the same pixel distribution, so after adversarial
        # training the discriminator cannot beat chance on held-out samples:
        # a two-sided 95% binomial band around 0.5 over 256 trials.
        hr, _ = toydata.make_toy_faces(4, 10, size=64, seed=9)
        pixels = bicubic_downsample(hr, ResampleSpec(factor=4))
        genuine = ImageBatch(pixels.data.clone(), ImageRole.GENUINE_LR)
        artificial = pixels
        sched = TrainingSchedule(lr=1e-3, batch_size=16, seed=1)
        cr, inv_cr, disc, disc_inv = stage1_pretrain_cc(
            sched, genuine, artificial, network_config=TINY, max_steps=500
        )
        rng = np.random.default_rng(0)
        real_idx = rng.choice(len(artificial), 128, replace=True)
        fake_idx = rng.choice(len(genuine), 128, replace=True)
        with torch.no_grad():
            regulated = forward_cr(cr, genuine.select(fake_idx))
        accuracy = discriminator_accuracy(disc, artificial.select(real_idx), regulated)
        correct = accuracy * 256
        # binomial(256, 0.5): mean 128, sd 8; 95% central band [112.3, 143.7]
        assert 112 <= correct <= 144, f"discriminator accuracy {accuracy} escapes the chance band"


class TestStage1Face:
    def test_single_identity_rejected(self, tiny_corpus):
        hr = tiny_corpus[0]
        labels = np.zeros(len(hr), dtype=np.int64)
        with pytest.raises(ConfigError):
            stage1_train_face_embed(SCHED, hr, labels, network_config=TINY, max_steps=1)

    def test_zero_steps_returns_fresh_net(self, tiny_corpus):
        hr, labels = tiny_corpus[0], tiny_corpus[1]
        net = stage1_train_face_embed(SCHED, hr, labels, network_config=TINY, max_steps=0)
        torch.manual_seed(_derive_seed(0, "init/face"))
        reference = build_network(NetworkKind.FACE_EMBED, TINY)
        assert params_equal(net, clone_params(reference))

    def test_intra_identity_cosine_beats_inter(self):
        hr, labels = toydata.make_toy_faces(4, 10, size=64, seed=2)
        train_idx = [i for i in range(40) if i % 10 < 8]
        hold_idx = [i for i in range(40) if i % 10 >= 8]
        sched = TrainingSchedule(lr=1e-3, batch_size=16, seed=2)
        net = stage1_train_face_embed(
            sched, hr.select(train_idx), labels[train_idx], network_config=TINY, max_steps=250
        )
        with torch.no_grad():
            emb = forward_face_embed(net, hr.select(hold_idx)).numpy()
        ids = labels[hold_idx]
        sims = emb @ emb.T
        intra, inter = [], []
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                (intra if ids[i] == ids[j] else inter).append(sims[i, j])
        assert np.mean(intra) > np.mean(inter)

    def test_center_loss_collapses_for_single_class(self):
        # The degenerate single-identity behaviour of the center objective:
        # with one center, minimizing it drives embeddings onto the center.
        torch.manual_seed(0)
        feats = torch.nn.Parameter(torch.randn(8, 4))
        center = torch.nn.Parameter(torch.zeros(1, 4))
        opt = torch.optim.Adam([feats, center], lr=0.05)
        for _ in range(400):
            opt.zero_grad()
            loss = 0.5 * ((feats - center) ** 2).sum(dim=1).mean()
            loss.backward()
            opt.step()
        assert float(loss) < 1e-3


class TestStage2:
    def test_missing_network_raises(self, tiny_corpus):
        hr, _, genuine, _ = tiny_corpus
        with pytest.raises(StateError):
            stage2_joint_finetune(SCHED, {}, {"hr": hr, "genuine": genuine}, max_steps=1)

    def test_loss_log_schema(self, tiny_corpus, tiny_stage1):
        hr, _, genuine, _ = tiny_corpus
        nets = dict(tiny_stage1)
        log = []
        stage2_joint_finetune(
            SCHED, nets, {"hr": hr, "genuine": genuine}, max_steps=3, log_sink=log.append
        )
        assert len(log) == 3
        assert list(log[0]) == ["step", "stage", "L_sr", "L_gan", "L_cr", "L_cr_sr", "L_cr_gan", "L_total"]
        w = LossWeights()
        for rec in log:
            expected = (
                rec["L_sr"]
                + w.lambda_cr * rec["L_cr"]
                + w.lambda_cr_sr * rec["L_cr_sr"]
                + w.lambda_cr_gan * rec["L_cr_gan"]
            )
            assert rec["L_total"] == pytest.approx(expected, abs=1e-6)

    def test_no_ul_zeroes_consistency_contribution(self, tiny_corpus, tiny_stage1):
        hr, _, genuine, _ = tiny_corpus
        sched = TrainingSchedule(
            lr=1e-3, batch_size=8, seed=0, ablation=frozenset({Ablation.NO_UL})
        )
        log = []
        stage2_joint_finetune(
            sched, dict(tiny_stage1), {"hr": hr, "genuine": genuine}, max_steps=3, log_sink=log.append
        )
        w = LossWeights()
        for rec in log:
            assert rec["L_cr_sr"] > 0.0
            expected = rec["L_sr"] + w.lambda_cr * rec["L_cr"] + w.lambda_cr_gan * rec["L_cr_gan"]
            assert rec["L_total"] == pytest.approx(expected, abs=1e-6)

    def test_no_cr_keeps_generator_bit_identical(self, tiny_corpus, tiny_stage1):
        hr, _, genuine, _ = tiny_corpus
        nets = dict(tiny_stage1)
        before = clone_params(nets["cr"])
        sched = TrainingSchedule(
            lr=1e-3, batch_size=8, seed=0, ablation=frozenset({Ablation.NO_CR})
        )
        log = []
        stage2_joint_finetune(
            sched, nets, {"hr": hr, "genuine": genuine}, max_steps=3, log_sink=log.append
        )
        assert params_equal(nets["cr"], before)
        for rec in log:
            assert rec["L_cr"] == 0.0
            assert rec["L_gan"] == 0.0

    def test_phase_attribution(self, tiny_corpus, tiny_stage1):
        hr, _, genuine, _ = tiny_corpus
        nets = dict(tiny_stage1)
        snapshots = {}
        changes = []

        def on_phase(phase):
            nonlocal snapshots
            current = {name: clone_params(net) for name, net in nets.items()}
            changed = {
                name
                for name in current
                if not all(torch.equal(current[name][k], snapshots[name][k]) for k in current[name])
            }
            changes.append((phase, changed))
            snapshots = current

        snapshots = {name: clone_params(net) for name, net in nets.items()}
        stage2_joint_finetune(
            SCHED, nets, {"hr": hr, "genuine": genuine}, max_steps=1, phase_callback=on_phase
        )
        phases = dict(changes)
        assert phases["disc"] <= {"disc_cr", "disc_inv_cr", "disc_feat"}
        assert "disc_feat" in phases["disc"]
        assert phases["gen"] <= {"sr", "cr"}
        assert "sr" in phases["gen"] and "cr" in phases["gen"]

    def test_frozen_networks_stay_frozen(self, tiny_corpus, tiny_stage1):
        hr, _, genuine, _ = tiny_corpus
        nets = dict(tiny_stage1)
        face_before = clone_params(nets["face"])
        inv_before = clone_params(nets["inv_cr"])
        stage2_joint_finetune(SCHED, nets, {"hr": hr, "genuine": genuine}, max_steps=3)
        assert params_equal(nets["face"], face_before)
        assert params_equal(nets["inv_cr"], inv_before)

    def test_no_sr_ri_still_updates_sr_from_paired_branch(self, tiny_corpus, tiny_stage1):
        hr, _, genuine, _ = tiny_corpus
        nets = dict(tiny_stage1)
        before = clone_params(nets["sr"])
        sched = TrainingSchedule(
            lr=1e-3, batch_size=8, seed=0, ablation=frozenset({Ablation.NO_SR_RI})
        )
        stage2_joint_finetune(sched, nets, {"hr": hr, "genuine": genuine}, max_steps=2)
        assert not params_equal(nets["sr"], before)


class TestDeterminismAndResume:
    def _run_joint(self, hr, genuine, steps, checkpoint_path=None, resume=None):
        sched = TrainingSchedule(lr=1e-3, batch_size=8, seed=11)
        if resume is None:
            sr = stage1_pretrain_sr(sched, hr, network_config=TINY, max_steps=5)
            cr, inv_cr, disc, disc_inv = stage1_pretrain_cc(
                sched,
                genuine,
                bicubic_downsample(hr, ResampleSpec(factor=4)),
                network_config=TINY,
                max_steps=5,
            )
            labels = np.arange(len(hr)) % 3
            face = stage1_train_face_embed(sched, hr, labels, network_config=TINY, max_steps=5)
            nets = {
                "sr": sr,
                "cr": cr,
                "inv_cr": inv_cr,
                "disc_cr": disc,
                "disc_inv_cr": disc_inv,
                "face": face,
            }
            state = None
        else:
            state, nets = resume
        log = []
        stage2_joint_finetune(
            sched,
            nets,
            {"hr": hr, "genuine": genuine},
            max_steps=steps,
            log_sink=log.append,
            resume_state=state,
            checkpoint_path=checkpoint_path,
        )
        return log

    def test_identical_runs_produce_identical_logs(self, tiny_corpus):
        hr, _, genuine, _ = tiny_corpus
        log_a = self._run_joint(hr, genuine, 6)
        log_b = self._run_joint(hr, genuine, 6)
        assert [json.dumps(r) for r in log_a] == [json.dumps(r) for r in log_b]

    def test_resume_reproduces_uninterrupted_sequence(self, tiny_corpus, tmp_path):
        hr, _, genuine, _ = tiny_corpus
        full_log = self._run_joint(hr, genuine, 10)
        ckpt = tmp_path / "mid.ckpt"
        self._run_joint(hr, genuine, 4, checkpoint_path=ckpt)
        state, nets = load_checkpoint(ckpt)
        resumed_log = self._run_joint(hr, genuine, 10, resume=(state, nets))
        assert [json.dumps(r) for r in full_log[4:]] == [json.dumps(r) for r in resumed_log]

    def test_sr_resume_matches_uninterrupted(self, tiny_corpus, tmp_path):
        hr = tiny_corpus[0]
        sched = TrainingSchedule(lr=1e-3, batch_size=8, seed=21)
        log_full = []
        stage1_pretrain_sr(
            sched, hr, network_config=TINY, max_steps=8, log_sink=log_full.append
        )
        ckpt = tmp_path / "sr_mid.ckpt"
        stage1_pretrain_sr(sched, hr, network_config=TINY, max_steps=3, checkpoint_path=ckpt)
        state, nets = load_checkpoint(ckpt)
        log_rest = []
        stage1_pretrain_sr(
            sched,
            hr,
            network_config=TINY,
            max_steps=8,
            log_sink=log_rest.append,
            resume=(state, nets),
        )
        assert [json.dumps(r) for r in log_full[3:]] == [json.dumps(r) for r in log_rest]

    def test_resume_wrong_stage_rejected(self, tiny_corpus, tmp_path):
        hr = tiny_corpus[0]
        sched = TrainingSchedule(lr=1e-3, batch_size=8, seed=2)
        ckpt = tmp_path / "sr.ckpt"
        stage1_pretrain_sr(sched, hr, network_config=TINY, max_steps=2, checkpoint_path=ckpt)
        state, nets = load_checkpoint(ckpt)
        with pytest.raises(StateError):
            stage1_train_face_embed(
                sched,
                hr,
                np.arange(len(hr)) % 2,
                network_config=TINY,
                max_steps=4,
                resume=(state, nets),
            )

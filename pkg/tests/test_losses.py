"""Loss-term oracles: closed-form fixtures for each objective, additivity
of the weighted total, and finite-difference agreement for the gradients."""

import numpy as np
import pytest

from hscf.autodiff import Tape, Tensor
from hscf.data import Task
from hscf.losses import LossWeights, cls_loss, cos_loss, kl_loss, rec_loss, total_loss
from hscf.model import LatentPair, Model, ModelConfig, prepare_subject
from hscf.synthetic import generate_synthetic_cohort


def pair(mu, logvar):
    return LatentPair(mu=Tensor(np.asarray(mu, dtype=float)),
                      logvar=Tensor(np.asarray(logvar, dtype=float)))


class TestKl:
    def test_standard_normal_is_zero(self):
        pairs = [pair(np.zeros((4, 3)), np.zeros((4, 3))) for _ in range(4)]
        assert kl_loss(pairs).item() == 0.0

    def test_single_coordinate_unit_mean_is_half(self):
        assert kl_loss([pair([[1.0]], [[0.0]])]).item() == pytest.approx(0.5, abs=1e-15)

    def test_averages_within_branch_and_sums_across(self):
        # one deviating coordinate out of 6 in each of two branches
        mu = np.zeros((2, 3))
        mu[0, 0] = 1.0
        two = kl_loss([pair(mu, np.zeros_like(mu)), pair(mu, np.zeros_like(mu))]).item()
        assert two == pytest.approx(2 * 0.5 / 6.0, abs=1e-15)

    def test_variance_term_closed_form(self):
        lv = np.log(np.full((1, 1), 2.0))
        expected = 0.5 * (2.0 - 1.0 - np.log(2.0))
        assert kl_loss([pair([[0.0]], lv)]).item() == pytest.approx(expected, rel=1e-12)

    def test_always_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = pair(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
            assert kl_loss([p]).item() >= 0.0


class TestRec:
    def test_perfect_reconstruction_is_zero(self):
        m = np.random.default_rng(1).uniform(0.2, 0.8, size=(4, 4))
        assert rec_loss(Tensor(m), Tensor(m), m, m).item() == 0.0

    def test_per_entry_mean_summed_over_modalities(self):
        target = np.zeros((2, 2))
        off = np.full((2, 2), 0.5)
        # each modality contributes mean(0.25) = 0.25
        got = rec_loss(Tensor(off), Tensor(off), target, target).item()
        assert got == pytest.approx(0.5, abs=1e-15)

    def test_single_entry_error_scales_by_matrix_size(self):
        target = np.zeros((3, 3))
        recon = target.copy()
        recon[0, 1] = 0.3
        got = rec_loss(Tensor(recon), Tensor(target), target, target).item()
        assert got == pytest.approx(0.09 / 9.0, rel=1e-12)


class TestCos:
    def test_parallel_orthogonal_antiparallel(self):
        a = np.array([[1.0, 0.0], [0.0, 2.0]])
        assert cos_loss(Tensor(a), Tensor(a)).item() == pytest.approx(1.0, abs=1e-15)
        b = np.array([[0.0, 1.0], [-2.0, 0.0]])
        assert cos_loss(Tensor(a), Tensor(b)).item() == pytest.approx(0.0, abs=1e-15)
        assert cos_loss(Tensor(a), Tensor(-a)).item() == pytest.approx(-1.0, abs=1e-15)

    def test_zero_vector_guard(self):
        z = np.zeros((2, 2))
        a = np.ones((2, 2))
        assert cos_loss(Tensor(z), Tensor(a)).item() == 0.0
        assert cos_loss(Tensor(a), Tensor(z)).item() == 0.0

    def test_flattens_rows_jointly(self):
        # cosine over the whole matrix, not row-wise means
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[0.0, 0.0], [0.0, 1.0]])
        assert cos_loss(Tensor(a), Tensor(b)).item() == pytest.approx(0.0, abs=1e-15)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        one = cos_loss(Tensor(a), Tensor(b)).item()
        other = cos_loss(Tensor(3.5 * a), Tensor(0.2 * b)).item()
        assert one == pytest.approx(other, rel=1e-12)


class TestCls:
    def test_uniform_probabilities_give_ln2(self):
        probs = Tensor([[0.5, 0.5]])
        got = cls_loss(probs, "NC", Task.NC_EMCI).item()
        assert got == pytest.approx(np.log(2.0), abs=1e-12)

    def test_confident_correct_is_small(self):
        probs = Tensor([[0.999, 0.001]])
        assert cls_loss(probs, "NC", Task.NC_EMCI).item() == pytest.approx(-np.log(0.999), rel=1e-9)

    def test_floor_prevents_infinities(self):
        probs = Tensor([[0.0, 1.0]])
        got = cls_loss(probs, "NC", Task.NC_EMCI).item()
        assert np.isfinite(got)
        assert got == pytest.approx(-np.log(1e-12), rel=1e-12)

    def test_reads_label_position_from_task(self):
        probs = Tensor([[0.2, 0.8]])
        nc = cls_loss(probs, "NC", Task.NC_EMCI).item()
        emci = cls_loss(probs, "EMCI", Task.NC_EMCI).item()
        assert nc == pytest.approx(-np.log(0.2), rel=1e-12)
        assert emci == pytest.approx(-np.log(0.8), rel=1e-12)


@pytest.fixture(scope="module")
def forward_case():
    cohort = generate_synthetic_cohort(seed=2, n_per_class=2, n_rois=6, signal=0.3)
    model = Model.create(
        ModelConfig(n_rois=6, hidden1=8, hidden2=4, latent_dim=2, clf_hidden=4, clf_embed=2),
        seed=1,
    )
    subject = cohort.subjects[0]
    out = model.forward(prepare_subject(subject), rng=np.random.default_rng(0), train_mode=True)
    return subject, out


class TestTotal:

    def test_breakdown_total_is_weighted_sum(self, forward_case):
        subject, out = forward_case
        weights = LossWeights(kl=2.0, rec=0.5, cos=3.0, cls=1.0)
        _, b = total_loss(out, subject.sc.weights, subject.fc.weights, subject.label,
                          Task.NC_EMCI, weights)
        expected = 2.0 * b.kl + 0.5 * b.rec + 3.0 * b.cos + 1.0 * b.cls
        assert b.total == pytest.approx(expected, rel=1e-12)

    def test_default_weights_are_unit(self, forward_case):
        subject, out = forward_case
        _, b = total_loss(out, subject.sc.weights, subject.fc.weights, subject.label, Task.NC_EMCI)
        assert b.total == pytest.approx(b.kl + b.rec + b.cos + b.cls, rel=1e-12)

    def test_as_dict_round_trip(self, forward_case):
        subject, out = forward_case
        _, b = total_loss(out, subject.sc.weights, subject.fc.weights, subject.label, Task.NC_EMCI)
        d = b.as_dict()
        assert set(d) == {"kl", "rec", "cos", "cls", "total"}
        assert d["total"] == b.total


class TestGradients:
    def test_kl_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        mu0 = rng.normal(scale=0.5, size=(3, 2))
        lv0 = rng.normal(scale=0.5, size=(3, 2))

        def value(mu, lv):
            return kl_loss([pair(mu, lv)]).item()

        mu_t, lv_t = Tensor(mu0), Tensor(lv0)
        with Tape() as tape:
            out = kl_loss([LatentPair(mu=mu_t, logvar=lv_t)])
        grads = tape.backward(out)
        step = 1e-6
        for arr, tensor, which in [(mu0, mu_t, "mu"), (lv0, lv_t, "lv")]:
            analytic = grads.get(tensor)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                hi = value(mu0, lv0)
                arr[idx] = orig - step
                lo = value(mu0, lv0)
                arr[idx] = orig
                num = (hi - lo) / (2 * step)
                assert analytic[idx] == pytest.approx(num, rel=1e-5, abs=1e-9), which

    def test_cos_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        a0 = rng.normal(size=(2, 3))
        b0 = rng.normal(size=(2, 3))
        a_t, b_t = Tensor(a0), Tensor(b0)
        with Tape() as tape:
            out = cos_loss(a_t, b_t)
        grads = tape.backward(out)
        step = 1e-6
        analytic = grads.get(a_t)
        for idx in np.ndindex(a0.shape):
            orig = a0[idx]
            a0[idx] = orig + step
            hi = cos_loss(Tensor(a0), Tensor(b0)).item()
            a0[idx] = orig - step
            lo = cos_loss(Tensor(a0), Tensor(b0)).item()
            a0[idx] = orig
            assert analytic[idx] == pytest.approx((hi - lo) / (2 * step), rel=1e-5, abs=1e-9)

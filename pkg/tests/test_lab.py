import copy
import io
import json
import math
from pathlib import Path

import numpy as np
import pytest

from chmereo.lab.cli import EXIT_CAP, EXIT_INVALID, EXIT_IO, EXIT_OK, run, sample_histories
from chmereo.lab.config import ConfigError, build_experiment, canonical_json, digest, parse_real
from chmereo.lab.rng import SplitMix64
from chmereo.overlay import read_overlay_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden" / "canonical_sweep.csv"


def load(name):
    return json.loads((CONFIGS / name).read_text())


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)
    return write


def csv_rows(text):
    return [line.split(",") for line in text.strip().split("\n")]


class TestRNG:
    def test_reference_sequence(self):
        # published SplitMix64 outputs for seed 0
        g = SplitMix64(0)
        assert [g.next_u64() for _ in range(3)] == [
            0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F,
        ]

    def test_uniform_range_and_determinism(self):
        a = [SplitMix64(42).uniform() for _ in range(3)]
        g = SplitMix64(42)
        b = [g.uniform() for _ in range(1000)]
        assert all(0.0 <= u < 1.0 for u in b)
        assert a[0] == b[0]
        assert abs(np.mean(b) - 0.5) < 0.05


class TestConfig:
    def test_parse_real(self):
        assert parse_real("pi/16") == math.pi / 16
        assert parse_real("3*pi/16") == 3 * math.pi / 16
        assert parse_real("-pi/4") == -math.pi / 4
        assert parse_real("pi") == math.pi
        assert parse_real(2) == 2.0
        with pytest.raises(ValueError):
            parse_real(True)

    def test_canonical_builds(self):
        exp = build_experiment(load("canonical.json"))
        assert exp.space.labels == ("S", "E")
        assert exp.sweep_values[-1] == math.pi / 4
        assert exp.seed == 20121114

    def test_digest_ignores_key_order(self):
        doc = load("canonical.json")
        reordered = json.loads(json.dumps(dict(reversed(list(doc.items())))))
        assert list(reordered) != list(doc)
        assert digest(doc) == digest(reordered)
        assert canonical_json(doc) == canonical_json(reordered)
        changed = copy.deepcopy(doc)
        changed["seed"] = 1
        assert digest(changed) != digest(doc)

    def test_all_defects_collected(self):
        doc = load("canonical.json")
        doc["hamiltonian"].append({"ops": {"Q": "X"}})
        doc["times"] = [2, 1]
        doc["eps"] = 2
        with pytest.raises(ConfigError) as info:
            build_experiment(doc)
        msgs = info.value.defects
        assert any("unknown factor label" in m for m in msgs)
        assert any("times" in m for m in msgs)
        assert any("eps" in m for m in msgs)

    def test_non_hermitian_term(self):
        doc = load("rotation.json")
        doc["hamiltonian"] = [{"ops": {"q": [[0, 1], [0, 0]]}}]
        with pytest.raises(ConfigError, match="not Hermitian"):
            build_experiment(doc)

    def test_named_states(self):
        doc = load("canonical.json")
        for state in ("|+0>", "bell", [[0.6, 0], 0, 0, [0, 0.8]]):
            doc["initial_state"] = state
            assert build_experiment(doc).initial_state.space.total_dim == 4

    def test_missing_parameter(self):
        doc = load("canonical.json")
        del doc["parameters"]
        exp = build_experiment(doc)
        with pytest.raises(ConfigError):
            exp.hamiltonian()

    def test_overrides(self):
        exp = build_experiment(load("canonical.json"), seed=3, tol=1e-6, cap=16)
        assert (exp.seed, exp.tol, exp.cap) == (3, 1e-6, 16)


class TestValidate:
    def test_canonical(self):
        code, out, _ = cli("validate", "--config", str(CONFIGS / "canonical.json"))
        assert code == EXIT_OK
        assert out == f"valid {digest(load('canonical.json'))}\n"

    def test_non_orthogonal_family(self, write_config):
        doc = load("rotation.json")
        doc["families"]["skew"] = {"factor": "q", "vectors": [[1, 0], [1, 1]]}
        code, out, err = cli("validate", "--config", write_config(doc))
        assert code == EXIT_INVALID
        assert "'skew'" in err and out == ""

    def test_unknown_label(self, write_config):
        doc = load("rotation.json")
        doc["hamiltonian"][0]["ops"] = {"nope": "X"}
        code, _, err = cli("validate", "--config", write_config(doc))
        assert code == EXIT_INVALID
        assert "nope" in err

    def test_missing_file(self, tmp_path):
        code, _, err = cli("validate", "--config", str(tmp_path / "absent.json"))
        assert code == EXIT_IO
        assert "cannot read" in err

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli("validate", "--config", str(path))[0] == EXIT_INVALID

    def test_usage_error(self):
        assert cli("validate")[0] == EXIT_INVALID

    def test_other_commands_refuse_invalid(self, write_config):
        doc = load("canonical.json")
        doc["times"] = [2, 1]
        path = write_config(doc)
        for cmd in ("weights", "consistency", "sweep", "sample"):
            assert cli(cmd, "--config", path)[0] == EXIT_INVALID


class TestWeights:
    def test_free_qubit(self, write_config):
        doc = load("rotation.json")
        doc["hamiltonian"] = []
        code, out, _ = cli("weights", "--config", write_config(doc))
        assert code == EXIT_OK
        assert out == "history,selection,weight\n0,0,1\n1,1,0\nsum,,1\n"

    def test_rotation(self):
        code, out, _ = cli("weights", "--config", str(CONFIGS / "rotation.json"))
        rows = csv_rows(out)
        assert [float(r[2]) for r in rows[1:3]] == pytest.approx([0.5, 0.5], abs=1e-15)

    def test_random_sums(self, write_config, rng):
        for _ in range(10):
            dim = int(rng.integers(2, 5))
            h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            h = (h + h.conj().T) / 2
            doc = {
                "space": [{"label": "q", "dim": dim}],
                "hamiltonian": [{"ops": {"q": [[[x.real, x.imag] for x in row] for row in h]}}],
                "families": {"z": {"factor": "q", "basis": "Z"}},
                "measurements": ["z", "z", "z"],
                "times": [0.3, 0.9, 1.4],
                "prepare_time": 0,
                "initial_state": "|0>",
            }
            code, out, _ = cli("weights", "--config", write_config(doc))
            assert code == EXIT_OK
            assert abs(float(csv_rows(out)[-1][2]) - 1) <= 1e-9

    def test_cap(self):
        code, _, err = cli("weights", "--config", str(CONFIGS / "canonical.json"), "--cap", "3")
        assert code == EXIT_CAP
        assert "cap" in err


class TestConsistency:
    def test_identical_and_orthogonal(self, write_config):
        doc = load("rotation.json")
        doc["hamiltonian"] = []
        doc["measurements"] = ["z", "z"]
        doc["times"] = [1, 2]
        doc["initial_state"] = "|+>"
        code, out, _ = cli("consistency", "--config", write_config(doc))
        rows = csv_rows(out)
        assert rows[0] == ["pair", "abs_d", "consistent"]
        assert all(r[1] == "0" and r[2] == "true" for r in rows[1:-1])
        assert rows[-1] == ["verdict", "0", "true"]

    def test_double_slit(self):
        code, out, _ = cli("consistency", "--config", str(CONFIGS / "double_slit.json"))
        rows = {r[0]: r for r in csv_rows(out)}
        # histories 1 = (0, 1) and 3 = (1, 1) end in |1> through different branches
        assert float(rows["1:3"][1]) == pytest.approx(0.25, abs=1e-15)
        assert rows["1:3"][2] == "false"
        assert rows["verdict"][2] == "false"


class TestSweep:
    def test_golden(self, tmp_path):
        out_path = tmp_path / "sweep.csv"
        code, out, err = cli("sweep", "--config", str(CONFIGS / "canonical.json"), "--out", str(out_path))
        assert code == EXIT_OK and out == ""
        assert "5 points" in err
        got = read_overlay_csv(out_path.read_text())
        want = read_overlay_csv(GOLDEN.read_text())
        for a, b in zip(got, want, strict=True):
            assert a.coupling == b.coupling
            assert a.max_offdiag == pytest.approx(b.max_offdiag, rel=1e-12, abs=1e-15)
            assert a.entropy == pytest.approx(b.entropy, rel=1e-12, abs=1e-15)
            assert (a.consistent, a.degenerate) == (b.consistent, b.degenerate)

    def test_single_zero_point(self, write_config):
        doc = load("canonical.json")
        doc["sweep"]["values"] = [0]
        code, out, _ = cli("sweep", "--config", write_config(doc))
        assert csv_rows(out)[1] == ["0", "0", "0", "true", "false"]

    def test_degenerate_point(self, write_config):
        doc = load("canonical.json")
        doc["sweep"]["values"] = ["pi/2", "pi/4"]
        code, out, _ = cli("sweep", "--config", write_config(doc))
        rows = csv_rows(out)
        assert rows[1][0] == oracles_fmt(math.pi / 4)
        assert rows[2][4] == "true" and rows[1][4] == "false"

    def test_record(self, tmp_path):
        rec = tmp_path / "run.json"
        code, _, _ = cli("sweep", "--config", str(CONFIGS / "canonical.json"), "--record", str(rec))
        data = json.loads(rec.read_text())
        assert data["config_digest"] == digest(load("canonical.json"))
        assert len(data["rows"]) == 5
        assert data["wall_time"] >= 0

    def test_needs_sweep_section(self):
        assert cli("sweep", "--config", str(CONFIGS / "rotation.json"))[0] == EXIT_INVALID

    def test_unwritable_output(self, tmp_path):
        code = cli("sweep", "--config", str(CONFIGS / "canonical.json"), "--out", str(tmp_path / "no" / "x.csv"))[0]
        assert code == EXIT_IO


def oracles_fmt(x):
    return format(x, ".17g")


class TestPartitionCheck:
    def _doc(self, cells, subcell, locations):
        return {
            "domain": {"objects": ["x"]},
            "partition": {"cells": cells, "subcell": subcell, "locations": locations},
        }

    def test_common_subcell(self, write_config):
        doc = self._doc(["z1", "z2", "z12"], [["z12", "z1"], ["z12", "z2"]], [["x", "z1"], ["x", "z2"]])
        code, out, _ = cli("partition-check", "--config", write_config(doc))
        assert "check_pcr: ok" in out
        # x shares both cells with nothing else, so the partition is strong
        assert code == EXIT_OK

    def test_separated(self, write_config):
        doc = self._doc(["z1", "z2"], [], [["x", "z1"], ["x", "z2"]])
        code, out, _ = cli("partition-check", "--config", write_config(doc))
        assert code == EXIT_INVALID
        assert "check_pcr: 1 violation(s)" in out

    def test_single_cell(self, write_config):
        doc = self._doc(["z1", "z2"], [], [["x", "z1"]])
        code, out, _ = cli("partition-check", "--config", write_config(doc))
        assert code == EXIT_OK

    def test_car(self):
        code, out, _ = cli("partition-check", "--config", str(CONFIGS / "partition_car.json"))
        assert code == EXIT_OK
        assert out.splitlines() == ["check_pcr: ok", "preserves_mereology: ok", "is_strong_partition: true"]

    def test_history(self, write_config):
        doc = {
            "domain": {"objects": ["x"]},
            "history": [
                {"time": 0, "partition": {"cells": ["a", "b"], "locations": [["x", "a"]]}},
                {"time": 1, "partition": {"cells": ["a", "b"], "locations": [["x", "a"], ["x", "b"]]}},
            ],
        }
        code, out, _ = cli("partition-check", "--config", write_config(doc))
        assert code == EXIT_INVALID
        assert "history_consistent: false" in out
        assert "[t=1] check_pcr: 1 violation(s)" in out

    def test_malformed(self, write_config):
        doc = {"domain": {"objects": ["a", "b"], "parthood": [["a", "b"], ["b", "a"]]}, "partition": {}}
        assert cli("partition-check", "--config", write_config(doc))[0] == EXIT_INVALID


class TestSample:
    def test_deterministic(self):
        args = ("sample", "--config", str(CONFIGS / "canonical.json"), "--n", "5")
        first, second = cli(*args), cli(*args)
        assert first[0] == EXIT_OK
        assert first[1] == second[1]
        assert csv_rows(first[1])[0] == ["sample", "t1", "t2"]

    def test_seed_changes_output(self):
        base = ("sample", "--config", str(CONFIGS / "rotation.json"), "--n", "50")
        assert cli(*base, "--seed", "1")[1] != cli(*base, "--seed", "2")[1]

    def test_trivial_family(self, write_config):
        doc = load("rotation.json")
        doc["families"]["all"] = {"factor": "q", "basis": "I"}
        doc["measurements"] = ["all"]
        code, out, _ = cli("sample", "--config", write_config(doc), "--n", "20")
        assert {r[1] for r in csv_rows(out)[1:]} == {"0"}

    def test_frequency(self):
        exp = build_experiment(load("rotation.json"))
        picks = sample_histories(exp, 10000)
        freq = sum(p[0] == 0 for p in picks) / len(picks)
        assert abs(freq - 0.5) <= 0.02

    def test_two_time_frequencies_match_weights(self):
        exp = build_experiment(load("canonical.json"))
        picks = sample_histories(exp, 4000)
        # canonical weights are all 1/4
        counts = np.bincount([2 * a + b for a, b in picks], minlength=4) / len(picks)
        assert np.max(np.abs(counts - 0.25)) <= 0.03

    def test_n_must_be_positive(self):
        assert cli("sample", "--config", str(CONFIGS / "rotation.json"), "--n", "0")[0] == EXIT_INVALID

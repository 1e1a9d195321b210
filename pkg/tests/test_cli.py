import numpy as np
import pytest

from cglsim import EmpiricalMeasure, make_grid
from cglsim.cli import (
    main,
    parse_config,
    read_field_samples,
    write_field_samples,
)

MINIMAL = """
family_name = "benchmark_A"
modes_per_dim = 16
n_paths = 8
epsilon_grid = [0.5, 0.1]
n_bootstrap = 20
depth_schedule = [2, 4, 8]
pullback_tol = 1e-4

[family_params]
a_gamma = 0.5
omega_gamma = 6.283185307179586
c_f = 0.2
omega_f = 6.283185307179586
b0 = 0.5
b1 = 1.0
omega_b = 6.283185307179586
sigma0 = 0.1
n_additive = 4

# short epsilon grid: loosen the trend threshold so verdicts hinge on
# dispatch and reproducibility, not on reaching the small-eps regime
[thresholds]
first_bogolyubov = 1e-2
second_bogolyubov = 0.03
periodicity_tol = 0.01
global_averaging = 0.03
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(MINIMAL)
    return path


class TestParseConfig:
    def test_minimal_config(self, config_file):
        cfg = parse_config(config_file)
        assert cfg.n_paths == 8
        assert cfg.epsilon_grid == (0.5, 0.1)
        assert cfg.family_params["sigma0"] == 0.1

    def test_defaults_filled(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('family_name = "benchmark_A"\n')
        cfg = parse_config(path)
        assert cfg.n_paths == 256
        assert cfg.epsilon_grid == (0.5, 0.1, 0.02)

    def test_unknown_key_names_nearest(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("n_path = 8\n")
        with pytest.raises(ValueError, match="n_paths"):
            parse_config(path)

    def test_dt_validation_message(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("dt = 0.1\nepsilon_grid = [0.5, 0.02]\n")
        with pytest.raises(ValueError, match="dt > epsilon/20"):
            parse_config(path)

    def test_toml_syntax_error_has_location(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("n_paths = = 8\n")
        with pytest.raises(ValueError, match="line"):
            parse_config(path)


class TestFieldSamples:
    def test_round_trip_exact(self, tmp_path):
        grid = make_grid(1, 16)
        rng = np.random.default_rng(0)
        c = rng.standard_normal((12, grid.n_lattice)) \
            + 1j * rng.standard_normal((12, grid.n_lattice))
        c[:, 0] = 0.0
        mu = EmpiricalMeasure.from_coeffs(grid, c)
        path = tmp_path / "s.cglf"
        write_field_samples(path, mu)
        back = read_field_samples(path)
        np.testing.assert_array_equal(back.samples, mu.samples)
        assert back.grid == grid

    def test_header_carries_geometry(self, tmp_path):
        grid = make_grid(2, 8, period=3.0)
        c = np.zeros((3, grid.n_lattice), complex)
        c[:, 1] = 1.0
        path = tmp_path / "s.cglf"
        write_field_samples(path, EmpiricalMeasure.from_coeffs(grid, c))
        back = read_field_samples(path)
        assert back.grid.dimension == 2
        assert back.grid.period == pytest.approx(3.0)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "s.cglf"
        path.write_bytes(b"NOPE" + bytes(60))
        with pytest.raises(ValueError, match="magic"):
            read_field_samples(path)

    def test_truncated_body_rejected(self, tmp_path):
        grid = make_grid(1, 16)
        c = np.zeros((2, grid.n_lattice), complex)
        c[:, 1] = 1.0
        path = tmp_path / "s.cglf"
        write_field_samples(path, EmpiricalMeasure.from_coeffs(grid, c))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="expected"):
            read_field_samples(path)


class TestDispatch:
    def test_check_passes(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["check", "--config", str(config_file),
                     "--out", str(out)])
        assert code == 0
        assert (out / "check.csv").exists()
        text = (out / "check.csv").read_text()
        assert text.startswith("# subcommand: check")
        assert "gap1" in text

    def test_gap_violation_exits_2(self, tmp_path, capsys):
        path = tmp_path / "c.toml"
        path.write_text(MINIMAL.replace("c_f = 0.2", "c_f = 1.5"))
        code = main(["bogolyubov1", "--config", str(path),
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_wasserstein_identical_files(self, tmp_path, capsys):
        grid = make_grid(1, 16)
        c = np.zeros((4, grid.n_lattice), complex)
        c[:, 1] = np.arange(4)
        mu = EmpiricalMeasure.from_coeffs(grid, c)
        f = tmp_path / "a.cglf"
        write_field_samples(f, mu)
        code = main(["wasserstein", str(f), str(f)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "0.0"

    def test_wasserstein_needs_two_files(self, tmp_path, capsys):
        code = main(["wasserstein", "missing.cglf"])
        assert code == 1

    def test_missing_config_is_internal_error(self, tmp_path, capsys):
        code = main(["check", "--config", str(tmp_path / "nope.toml"),
                     "--out", str(tmp_path)])
        assert code == 1

    def test_bogolyubov1_csv_schema_and_determinism(self, config_file,
                                                    tmp_path, capsys):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["bogolyubov1", "--config", str(config_file),
                     "--out", str(out_a)]) == 0
        assert main(["bogolyubov1", "--config", str(config_file),
                     "--out", str(out_b)]) == 0
        text_a = (out_a / "bogolyubov1.csv").read_bytes()
        text_b = (out_b / "bogolyubov1.csv").read_bytes()
        assert text_a == text_b
        header = [line for line in text_a.decode().splitlines()
                  if not line.startswith("#")][0]
        assert header == "epsilon,estimate,ci_low,ci_high,n_paths,dt,seed"

    def test_seed_override_changes_output(self, config_file, tmp_path,
                                          capsys):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["bogolyubov1", "--config", str(config_file),
              "--out", str(out_a)])
        main(["bogolyubov1", "--config", str(config_file),
              "--out", str(out_b), "--seed", "99"])
        assert (out_a / "bogolyubov1.csv").read_text() \
            != (out_b / "bogolyubov1.csv").read_text()

    def test_quick_flag_shrinks_run(self, config_file, tmp_path, capsys):
        out = tmp_path / "q"
        code = main(["simulate", "--config", str(config_file),
                     "--out", str(out), "--quick"])
        assert code == 0
        assert (out / "samples_final.cglf").exists()
        mu = read_field_samples(out / "samples_final.cglf")
        assert mu.n_samples == 8          # floor of the quarter-size rule

import numpy as np
import pytest

from maxshape.cli_runner import (
    check_gradient,
    load_config,
    main,
    parse_config,
    run,
    run_eigs,
)
from maxshape.errors import ConfigError


def config_text(extra="", mesh="mesh.unit_square = 4",
                target="objective.lambda_target = 9.87"):
    return "\n".join([mesh, target, extra])


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config(config_text())
        assert cfg.mesh_unit_square == 4
        assert cfg.objective.lambda_target == pytest.approx(9.87)
        assert cfg.objective.alpha == 100.0
        assert cfg.objective.beta == 1e-6
        assert cfg.objective.epsilon == 1e-4
        assert cfg.optimizer.tol == 1e-7
        assert cfg.optimizer.gamma == 0.1
        assert cfg.optimizer.rho_ls == 0.1
        assert cfg.optimizer.xi == 0.2
        assert cfg.optimizer.b0_scale == pytest.approx(0.01)  # 1/alpha
        assert cfg.eigen.tol == 1e-5
        assert cfg.seed == 0

    def test_comments_and_spacing(self):
        cfg = parse_config(
            "# a comment\nmesh.unit_square=3   # trailing\n"
            "objective.lambda_target =  2.5\n\n")
        assert cfg.mesh_unit_square == 3
        assert cfg.objective.lambda_target == 2.5

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(extra="objective.gamma = 1"))

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(extra="mesh.unit_square = 8"))

    def test_mesh_source_exclusive(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(extra="mesh.msh_path = foo.msh"))
        with pytest.raises(ConfigError):
            parse_config("objective.lambda_target = 1.0")

    def test_target_required(self):
        with pytest.raises(ConfigError):
            parse_config("mesh.unit_square = 4")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(extra="optimizer.gamma = big"))

    def test_invalid_parameter_range(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(extra="optimizer.gamma = 0.9"))


class TestRun:
    @pytest.fixture
    def quick_config(self, tmp_path):
        # target barely above the current eigenvalue: converges in a few steps
        text = "\n".join([
            "mesh.unit_square = 4",
            "objective.lambda_target = 10.0",
            "objective.alpha = 3e-4",
            "eigen.shift = 9.0",
            "eigen.nev = 6",
            "eigen.tol = 1e-8",
            "optimizer.k_max = 40",
            "optimizer.tol = 1e-5",
            f"output.dir = {tmp_path / 'out'}",
            "output.emit_vtk_every = 2",
            "seed = 3",
        ])
        return parse_config(text), tmp_path / "out"

    def test_artifacts_written(self, quick_config):
        cfg, out = quick_config
        code = run(cfg)
        assert code in (0, 1)
        assert (out / "iterations.csv").is_file()
        assert (out / "summary.txt").is_file()
        assert (out / "deformed_final.vtk").is_file()
        assert (out / "deformed_0000.vtk").is_file()

        header = (out / "iterations.csv").read_text().splitlines()[0]
        assert header == "k,lambda,j_value,grad_norm,step,theta,jq_min,jq_max"
        summary = (out / "summary.txt").read_text()
        assert "lambda_initial" in summary
        assert "r_rel" in summary

    def test_deterministic_iterations(self, tmp_path):
        texts = []
        for name in ("a", "b"):
            cfg = parse_config("\n".join([
                "mesh.unit_square = 4",
                "objective.lambda_target = 10.0",
                "objective.alpha = 3e-4",
                "eigen.shift = 9.0",
                "eigen.tol = 1e-8",
                "optimizer.k_max = 8",
                f"output.dir = {tmp_path / name}",
                "seed = 11",
            ]))
            run(cfg)
            texts.append((tmp_path / name / "iterations.csv").read_bytes())
        assert texts[0] == texts[1]

    def test_missing_mesh_is_config_error(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        out = tmp_path / "never"
        cfg_file.write_text("\n".join([
            f"mesh.msh_path = {tmp_path / 'absent.msh'}",
            "objective.lambda_target = 1.0",
            f"output.dir = {out}",
        ]))
        code = main(["run", "--config", str(cfg_file)])
        assert code == 2
        assert not out.exists()  # no partial artifacts

    def test_msh_input(self, tmp_path):
        from maxshape import generate_unit_square

        mesh = generate_unit_square(3)
        lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat",
                 "$Nodes", str(mesh.n_vertices)]
        lines += [f"{i + 1} {x:.17g} {y:.17g} 0"
                  for i, (x, y) in enumerate(mesh.vertices)]
        lines += ["$EndNodes", "$Elements", str(mesh.n_triangles)]
        lines += [f"{t + 1} 2 2 0 1 {a + 1} {b + 1} {c + 1}"
                  for t, (a, b, c) in enumerate(mesh.triangles)]
        lines += ["$EndElements", ""]
        msh = tmp_path / "square.msh"
        msh.write_text("\n".join(lines))
        cfg = parse_config("\n".join([
            f"mesh.msh_path = {msh}",
            "objective.lambda_target = 10.0",
            "eigen.shift = 9.0",
            "eigen.nev = 4",
            "optimizer.k_max = 1",
            f"output.dir = {tmp_path / 'o'}",
        ]))
        code = run(cfg)
        assert code in (0, 1)
        assert (tmp_path / "o" / "summary.txt").is_file()


class TestCheckGradient:
    def base_config(self, tmp_path, n=8):
        return parse_config("\n".join([
            f"mesh.unit_square = {n}",
            "objective.lambda_target = 8.9",
            "objective.alpha = 1e-3",
            "eigen.shift = 8.0",
            "eigen.tol = 1e-9",
            f"output.dir = {tmp_path}",
            "seed = 5",
        ]))

    def test_passes_at_origin(self, tmp_path, capsys):
        report, code = check_gradient(self.base_config(tmp_path), 3, 1e-5)
        assert code == 0
        assert report["max_rel_error"] <= 1e-4
        assert "PASS" in capsys.readouterr().out

    def test_decay_across_steps(self, tmp_path):
        report, code = check_gradient(self.base_config(tmp_path, n=4), 2,
                                      [1e-2, 1e-3, 1e-4])
        assert code == 0
        for rows in report["directions"]:
            errs = [r["rel_error"] for r in rows]
            assert errs[0] > errs[1]           # coarse step is worse
            assert errs[0] / errs[1] >= 20.0   # roughly O(h^2)
            assert errs[2] <= errs[0]

    def test_zero_directions(self, tmp_path):
        report, code = check_gradient(self.base_config(tmp_path, n=4), 0, 1e-5)
        assert code == 0
        assert report["directions"] == []


class TestEigsCommand:
    def test_prints_spectrum(self, tmp_path, capsys):
        cfg = parse_config("\n".join([
            "mesh.unit_square = 8",
            "objective.lambda_target = 9.87",
            "eigen.shift = 9.0",
            f"output.dir = {tmp_path}",
        ]))
        assert run_eigs(cfg, nev=6) == 0
        out = capsys.readouterr().out
        assert "dofs_total" in out
        lines = [l for l in out.splitlines() if l.strip() and l[0:3].strip().isdigit()]
        assert len(lines) == 6
        lam0 = float(lines[0].split()[1])
        assert lam0 == pytest.approx(np.pi ** 2, rel=0.02)


class TestMain:
    def test_config_file_missing(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_eigs_cli(self, tmp_path, capsys):
        cfg_file = tmp_path / "e.cfg"
        cfg_file.write_text("\n".join([
            "mesh.unit_square = 4",
            "objective.lambda_target = 9.87",
            "eigen.shift = 9.0",
        ]))
        assert main(["eigs", "--config", str(cfg_file), "--nev", "4"]) == 0
        assert "lambda" in capsys.readouterr().out

    def test_check_gradient_cli(self, tmp_path):
        cfg_file = tmp_path / "g.cfg"
        cfg_file.write_text("\n".join([
            "mesh.unit_square = 4",
            "objective.lambda_target = 8.9",
            "objective.alpha = 1e-3",
            "eigen.shift = 8.0",
            "eigen.tol = 1e-9",
            "seed = 5",
        ]))
        assert main(["check-gradient", "--config", str(cfg_file),
                     "--dirs", "2", "--h", "1e-5"]) == 0

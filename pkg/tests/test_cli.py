import json

import pytest

from phskew.cli import EXIT_ERROR, EXIT_OK, EXIT_REFUSED, OUTPUT_ENV, main

from conftest import CONFIGS


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*map(str, argv), "--output", str(out)])
    return code, out


def report(out):
    rows = [line.split("\t") for line in (out / "report.tsv").read_text().splitlines()[1:]]
    return {(s, k): v for s, k, v in rows}


def test_certify_matrix_pass_and_conditions(tmp_path):
    code, out = run(tmp_path, "certify-matrix", "--input", CONFIGS / "cat.txt")
    assert code == EXIT_OK
    r = report(out)
    assert r[("verdict", "anosov")] == "true"
    assert float(r[("spectrum", "chi_hat")]) == pytest.approx(0.9624236501, abs=1e-9)
    for k, want in ((4, EXIT_REFUSED), (5, EXIT_OK)):
        code, _ = run(tmp_path, "certify-matrix", "--input", CONFIGS / "cat.txt",
                      "--fiber-matrix", CONFIGS / "cat.txt", "--k", k, name=f"k{k}")
        assert code == want


def test_certify_matrix_refuses_non_anosov(tmp_path):
    code, out = run(tmp_path, "certify-matrix", "--input", CONFIGS / "shear_fiber.txt")
    assert code == EXIT_REFUSED
    assert report(out)[("result", "verdict")] == "refused"


def test_classify_skew(tmp_path):
    code, out = run(tmp_path, "classify-skew", "--input", CONFIGS / "cat5.txt",
                    "--fiber-matrix", CONFIGS / "cat.txt")
    assert code == EXIT_OK and report(out)[("result", "verdict")] == "U2"
    code, _ = run(tmp_path, "classify-skew", "--input", CONFIGS / "cat.txt",
                  "--fiber-matrix", CONFIGS / "cat.txt", name="b")
    assert code == EXIT_REFUSED
    code, _ = run(tmp_path, "classify-skew", "--input", CONFIGS / "cat.txt", name="c")
    assert code == EXIT_ERROR


def test_holonomy_all_kinds(tmp_path):
    for kind in ("u", "s", "loop"):
        code, out = run(tmp_path, "holonomy", "--input", CONFIGS / "translation_skew.yaml",
                        "--kind", kind, "--samples", 3, "--seed", 4, name=kind)
        assert code == EXIT_OK
        assert len((out / "samples.tsv").read_text().splitlines()) == 4


def test_holonomy_depth_cap_is_inconclusive(tmp_path):
    code, out = run(tmp_path, "holonomy", "--input", CONFIGS / "shear_skew.yaml",
                    "--delta", 0.1, "--tol", 1e-15, "--max-depth", 10)
    assert code == EXIT_REFUSED
    assert report(out)[("result", "verdict")] == "inconclusive"


def test_accessibility_decoupled_fails_with_margins(tmp_path):
    code, out = run(tmp_path, "accessibility", "--input", CONFIGS / "decoupled_skew.yaml",
                    "--sigma", 0.01, "--grid-step", 0.1)
    assert code == EXIT_REFUSED
    r = report(out)
    assert r[("result", "verdict")] == "fail"
    assert r[("covering", "K0")] == "4" and r[("covering", "K1")] == "9"
    assert (out / "margins.tsv").read_text().startswith("axis\tsubset\tseparation")


def test_deform_verify_single(tmp_path):
    code, out = run(tmp_path, "deform-verify", "--input", CONFIGS / "translation_skew.yaml")
    r = report(out)
    assert code == EXIT_OK, r
    assert r[("summary", "bound_ok")] == "true"
    assert r[("apriori", "ratio_ok")] == "true"


def test_deform_verify_needs_deformation(tmp_path):
    code, _ = run(tmp_path, "deform-verify", "--input", CONFIGS / "shear_skew.yaml")
    assert code == EXIT_ERROR


def test_certify_and_refusal(tmp_path):
    code, out = run(tmp_path, "certify", "--input", CONFIGS / "conjugated_ifs.yaml",
                    "--res-E", 16)
    r = report(out)
    assert code == EXIT_OK
    assert r[("ifs", "seed")] == "11" and r[("grid", "resolution")] == "4,16"
    assert float(r[("bounds", "kappa1")]) == pytest.approx(0.25084402, abs=1e-6)
    code, _ = run(tmp_path, "certify", "--input", CONFIGS / "translation_ifs.yaml", name="t")
    assert code == EXIT_REFUSED


def test_lyapunov_and_density(tmp_path):
    code, out = run(tmp_path, "lyapunov", "--input", CONFIGS / "conjugated_ifs.yaml",
                    "--n", 2000)
    assert code == EXIT_OK
    assert abs(float(report(out)[("lyapunov", "sum")])) < 1e-9
    code, out = run(tmp_path, "density", "--input", CONFIGS / "translation_ifs.yaml",
                    "--n", 20000, "--eps", 0.01, name="d")
    assert code == EXIT_OK
    assert report(out)[("density", "coverage")] == "1.0"
    assert (out / "first_visits.tsv").exists()


def test_seed_flag_overrides_file_seed(tmp_path):
    _, out = run(tmp_path, "lyapunov", "--input", CONFIGS / "conjugated_ifs.yaml",
                 "--n", 1000, "--seed", 99)
    assert report(out)[("ifs", "seed")] == "99"
    assert json.loads((out / "manifest.json").read_text())["seed"] == 99


def test_manifest_contents(tmp_path):
    _, out = run(tmp_path, "certify-matrix", "--input", CONFIGS / "cat.txt")
    m = json.loads((out / "manifest.json").read_text())
    assert m["command"] == "certify-matrix" and m["exit_code"] == 0
    assert len(m["inputs"]["input"]["sha256"]) == 64
    assert set(m["versions"]) >= {"phskew", "numpy", "scipy"}
    assert m["wall_time_s"] >= 0 and "timestamp" in m
    assert "timestamp" not in (out / "report.tsv").read_text()


def _config(tmp_path, body):
    p = tmp_path / "run.yaml"
    p.write_text(body)
    return p


def test_empty_config_is_an_error(tmp_path, capsys):
    cfg = _config(tmp_path, "")
    code, _ = run(tmp_path, "certify-matrix", "--config", cfg)
    assert code == EXIT_ERROR
    assert "empty" in capsys.readouterr().err


def test_config_paths_and_params(tmp_path):
    cfg = _config(tmp_path, f"schema: phskew/run@1\ncommand: certify-matrix\n"
                            f"input: {CONFIGS / 'cat.txt'}\nparams: {{k: 5}}\n")
    code, out = run(tmp_path, "certify-matrix", "--config", cfg)
    assert code == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["params"]["k"] == 5


def test_conflict_needs_allow_override(tmp_path, capsys):
    cfg = _config(tmp_path, f"schema: phskew/run@1\ninput: {CONFIGS / 'cat.txt'}\n"
                            "params: {k: 5}\n")
    code, _ = run(tmp_path, "certify-matrix", "--config", cfg, "--k", 3)
    assert code == EXIT_ERROR
    assert "--allow-override" in capsys.readouterr().err
    code, out = run(tmp_path, "certify-matrix", "--config", cfg, "--k", 3, "--allow-override",
                    name="o")
    assert code == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["params"]["k"] == 5
    # agreeing values are not a conflict
    code, _ = run(tmp_path, "certify-matrix", "--config", cfg, "--k", 5, name="p")
    assert code == EXIT_OK


def test_config_rejects_unknown_and_invalid(tmp_path):
    for body in ("schema: phskew/run@1\nparams: {nope: 1}\n",
                 "schema: phskew/run@1\nbogus: 1\n",
                 "schema: phskew/run@2\n",
                 "schema: phskew/run@1\ncommand: certify\n"):
        cfg = _config(tmp_path, body)
        code, _ = run(tmp_path, "certify-matrix", "--config", cfg, "--input",
                      CONFIGS / "cat.txt")
        assert code == EXIT_ERROR, body


def test_invalid_numeric_flags(tmp_path):
    for argv in (("--k", 0), ("--k", "x"), ("--workers", 0)):
        code, _ = run(tmp_path, "certify-matrix", "--input", CONFIGS / "cat.txt", *argv)
        assert code == EXIT_ERROR
    code, _ = run(tmp_path, "holonomy", "--input", CONFIGS / "shear_skew.yaml", "--kind", "w")
    assert code == EXIT_ERROR


def test_missing_input_is_an_error(tmp_path):
    code, _ = run(tmp_path, "certify-matrix")
    assert code == EXIT_ERROR
    code, _ = run(tmp_path, "certify-matrix", "--input", tmp_path / "absent.txt")
    assert code == EXIT_ERROR


def test_output_env_only_as_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["certify-matrix", "--input", str(CONFIGS / "cat.txt")]) == EXIT_OK
    assert (tmp_path / "env" / "report.tsv").exists()
    code, out = run(tmp_path, "certify-matrix", "--input", CONFIGS / "cat.txt", name="flag")
    assert (out / "report.tsv").exists()


def test_usage_errors_exit_one():
    assert main([]) == EXIT_ERROR
    assert main(["no-such-command"]) == EXIT_ERROR
    assert main(["--version"]) == EXIT_OK

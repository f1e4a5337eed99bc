"""Figure rendering tests.  Input CSVs come from the sampler package's
command line, its external interface; nothing else of it is imported."""

import subprocess
import sys

import pytest

from hiergibbs_figures import FigureSpec, SchemaError, read_table, render
from hiergibbs_figures.cli import main as cli_main


def run_hiergibbs(subcommand, out, *settings):
    args = [sys.executable, "-m", "hiergibbs.cli", subcommand, "--out", str(out)]
    for item in settings:
        args += ["--set", item]
    subprocess.run(args, check=True, capture_output=True, text=True)
    return out


@pytest.fixture(scope="module")
def fig1_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("csv") / "fig1.csv"
    return run_hiergibbs(
        "fig1", out, "J_grid=10,20", "replications=2", "iters=400",
        "burn_in=100", "base_seed=99",
    )


@pytest.fixture(scope="module")
def fig3_csvs(tmp_path_factory):
    root = tmp_path_factory.mktemp("csv3")
    paths = []
    for m in (2, 3):
        out = root / f"fig3_m{m}.csv"
        run_hiergibbs(
            "fig3", out, f"m={m}", "J_grid=10,20", "replications=2",
            "iters=400", "burn_in=100", "base_seed=99",
        )
        paths.append(out)
    return paths


@pytest.fixture(scope="module")
def fig2_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("csv2") / "fig2.csv"
    return run_hiergibbs("fig2", out, "mu_star_grid=-1,0,1")


class TestRender:
    def test_criterion_11_figures_render_and_are_deterministic(
        self, tmp_path, fig1_csv, fig2_csv, fig3_csvs
    ):
        # every figure kind renders from real CLI output without schema
        # errors; rendering the same inputs twice gives identical bytes
        for kind, inputs in (
            ("fig1", [fig1_csv]),
            ("fig2", [fig2_csv]),
            ("fig3", fig3_csvs),
        ):
            first = tmp_path / f"{kind}_a.png"
            second = tmp_path / f"{kind}_b.png"
            render(FigureSpec(kind=kind, input_csv=[str(p) for p in inputs],
                              output_path=str(first)))
            render(FigureSpec(kind=kind, input_csv=[str(p) for p in inputs],
                              output_path=str(second)))
            assert first.stat().st_size > 0
            assert first.read_bytes() == second.read_bytes()

    def test_header_only_csv_renders_warning_axes(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text(
            "# hiergibbs 0.1.0 experiment=fig1_binomial_iat\n"
            "experiment,J,replicate,seed,max_iat,iat_mu,iat_tau1,error\n"
        )
        out = tmp_path / "empty.png"
        render(FigureSpec(kind="fig1", input_csv=[str(path)], output_path=str(out)))
        assert out.stat().st_size > 0

    def test_schema_mismatch_names_the_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# meta\nexperiment,J,replicate\n")
        with pytest.raises(SchemaError, match="max_iat"):
            render(FigureSpec(kind="fig1", input_csv=[str(path)],
                              output_path=str(tmp_path / "bad.png")))

    def test_missing_metadata_line_rejected(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("experiment,J,replicate,max_iat\n")
        with pytest.raises(SchemaError, match="metadata"):
            read_table(path)

    def test_fig2_right_panel_uses_median_iat_when_present(self, tmp_path):
        path = tmp_path / "fig2_iat.csv"
        path.write_text(
            "# meta\nexperiment,mu_star,gamma,bound_T,median_max_iat\n"
            "fig2_logit_gap,-1,0.15,9.4,4.2\n"
            "fig2_logit_gap,0,0.21,6.6,3.1\n"
            "fig2_logit_gap,1,0.15,9.4,4.3\n"
        )
        out = tmp_path / "fig2_iat.png"
        render(FigureSpec(kind="fig2", input_csv=[str(path)], output_path=str(out)))
        assert out.stat().st_size > 0

    def test_cli_round_trip(self, tmp_path, fig2_csv):
        out = tmp_path / "cli_fig2.png"
        code = cli_main(["--kind", "fig2", "--in", str(fig2_csv), "--out", str(out)])
        assert code == 0
        assert out.stat().st_size > 0

    def test_cli_reports_schema_errors(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("# meta\nexperiment\n")
        code = cli_main(["--kind", "fig1", "--in", str(bad),
                         "--out", str(tmp_path / "x.png")])
        assert code == 1

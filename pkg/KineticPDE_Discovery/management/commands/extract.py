from django.core.management.base import CommandError

from ...exceptions import ConfigurationError
from ...extract import (
    CoefficientTable,
    error_metrics,
    exact_table,
    expand_coefficients,
    prune,
    render_pde,
    write_pde_text,
    write_report_csv,
)
from ...symnet import load_checkpoint
from ._base import USAGE_ERROR, ExperimentCommand

TRUTH_EQUATIONS = {"g": "g", "rho": "rho", "diffusion": "rho"}


class Command(ExperimentCommand):
    help = "Expands a checkpoint into the learned PDE and scores it against the generating equation."

    config_flags = ("epsilon", "sigma_s", "sigma_a", "source", "scheme", "prune_threshold", "truth")

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint", required=True, help="Checkpoint written by train")
        parser.add_argument("--eps", dest="epsilon", type=float, help="True ε of the data")
        parser.add_argument("--sigma-s", dest="sigma_s", help="True σS(x)")
        parser.add_argument("--sigma-a", dest="sigma_a", help="True σA(x)")
        parser.add_argument("--source", help="True G(x)")
        parser.add_argument("--scheme", help="Fitting scheme, when the checkpoint does not record it")
        parser.add_argument("--prune-threshold", dest="prune_threshold", type=float, help="Relative pruning bound")
        parser.add_argument("--truth", help="Equations to score, from g,rho,diffusion (default g,rho)")

    def run(self, **options):
        try:
            model = load_checkpoint(options["checkpoint"])
        except FileNotFoundError as exc:
            raise CommandError(f"Checkpoint not found: {options['checkpoint']}", returncode=USAGE_ERROR) from exc
        if options.get("scheme") is None and "scheme" in model.metadata:
            options["scheme"] = model.metadata["scheme"]
        cfg = self.load_config(options)
        if model.grid is None:
            raise ConfigurationError("The checkpoint does not record its grid")
        truth = cfg.physics(model.grid)

        out = cfg["output_dir"]
        out.mkdir(parents=True, exist_ok=True)
        tables = []
        for name in cfg.truth_components:
            if name not in TRUTH_EQUATIONS:
                raise ConfigurationError(f"Unknown truth equation {name!r}")
            equation = TRUTH_EQUATIONS[name]
            if equation not in model.cfg.equations:
                continue
            predicted = prune(expand_coefficients(model, cfg.scheme, component=equation), cfg["prune_threshold"])
            exact = exact_table(truth, name)
            write_report_csv(exact, predicted, out / f"report_{name}.csv")
            type1, type2 = error_metrics(exact, predicted)
            self.stdout.write(f"{name}: Type-I {type1:.4f}%  Type-II {type2:.4f}%")
            ansatz = CoefficientTable(equation, predicted.raw, predicted.raw)
            self.stdout.write(f"{name} ansatz only: {render_pde(ansatz)}")
            tables.append(predicted)
        if not tables:
            raise ConfigurationError("None of the requested equations is fitted by the checkpoint")
        write_pde_text(tables, out / "learned_pde.txt")
        self.report(f"Wrote {out / 'learned_pde.txt'}")

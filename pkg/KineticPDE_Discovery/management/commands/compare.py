from ...baselines import build_dictionary_matrix, lasso, lasso_sweep, stridge, to_table
from ...extract import exact_table, render_pde, write_report_csv
from ...solver import load_dataset
from ._base import ExperimentCommand, logger


class Command(ExperimentCommand):
    help = "Runs a Lasso or STRidge baseline on a dataset and writes its report."

    config_flags = ("method", "ridge_lambda", "hard_threshold", "stridge_sweeps")

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--dataset", required=True, help="KDS1 dataset written by generate")
        parser.add_argument("--method", choices=["lasso", "stridge"], help="Regression method (default lasso)")
        parser.add_argument("--alpha", type=float, help="Lasso α; without it the α grid is swept")
        parser.add_argument("--ridge-lambda", dest="ridge_lambda", type=float, help="STRidge ridge weight")
        parser.add_argument("--hard-threshold", dest="hard_threshold", type=float, help="STRidge hard threshold")
        parser.add_argument("--sweeps", dest="stridge_sweeps", type=int, help="STRidge threshold sweeps")

    def run(self, **options):
        cfg = self.load_config(options)
        ds = load_dataset(options["dataset"])
        dm = build_dictionary_matrix(ds)
        exact = exact_table(ds.spec, "g")
        method = cfg["method"]

        if method == "lasso":
            if options.get("alpha") is None:
                alpha, x = lasso_sweep(dm, exact)
            else:
                alpha = options["alpha"]
                x = lasso(dm.A, dm.b, alpha)
            logger.info("lasso: alpha=%g", alpha)
        else:
            x = stridge(dm.A, dm.b, cfg["ridge_lambda"], cfg["hard_threshold"], cfg["stridge_sweeps"])

        predicted = to_table(dm, x)
        out = cfg["output_dir"]
        out.mkdir(parents=True, exist_ok=True)
        type1, type2 = write_report_csv(exact, predicted, out / f"baseline_{method}.csv")
        self.stdout.write(render_pde(predicted))
        self.report(f"{method}: Type-I {type1:.4f}%  Type-II {type2:.4f}%")

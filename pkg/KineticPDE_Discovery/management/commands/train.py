from ...exceptions import DivergenceError
from ...fitloss import FitScheme
from ...solver import load_dataset
from ...symnet import AnsatzModel, save_checkpoint
from ...train import train
from ._base import ExperimentCommand, logger

DEFAULT_SWEEP = "0,1,2,3"


class Command(ExperimentCommand):
    help = "Fits the symbolic ansatz to a dataset; writes a checkpoint and the training history."

    config_flags = (
        "scheme",
        "multiscale",
        "layers",
        "base_ops",
        "equations",
        "components",
        "mean_free_mask",
        "stencil_order",
        "spatial_pieces",
        "spatial_degree",
        "physics_mode",
        "interval_sweep",
        "norm",
        "gamma_sparse",
        "gamma_cont",
        "gamma_meanfree",
        "lr",
        "epochs",
        "minibatch",
        "per_scale_lr",
        "log_every",
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--dataset", required=True, help="KDS1 dataset written by generate")
        parser.add_argument("--scheme", choices=[s.value for s in FitScheme], help="Fitting scheme (default imex1)")
        parser.add_argument("--multiscale", type=int, help="Largest scale M of the ansatz (default 1)")
        parser.add_argument("--layers", type=int, help="Composition layers K (default 1)")
        parser.add_argument("--base-ops", dest="base_ops", help="Comma-separated base operators (default I,A,P)")
        parser.add_argument("--equations", help="Fitted equations, from g,rho (default g,rho)")
        parser.add_argument("--components", choices=["two_component", "scalar"], help="Ansatz inputs")
        parser.add_argument(
            "--no-mean-free-mask",
            dest="mean_free_mask",
            action="store_false",
            default=None,
            help="Do not enforce ⟨F1⟩ = 0 structurally",
        )
        parser.add_argument("--stencil-order", dest="stencil_order", type=int, choices=[1, 2])
        parser.add_argument("--spatial-pieces", dest="spatial_pieces", type=int, help="Pieces of spatial weights")
        parser.add_argument("--spatial-degree", dest="spatial_degree", type=int, help="Degree per piece")
        parser.add_argument("--physics-mode", dest="physics_mode", choices=["known", "scalar", "spatial"])
        parser.add_argument(
            "--interval-sweep",
            dest="interval_sweep",
            nargs="?",
            const=DEFAULT_SWEEP,
            help=f"Train one instance per ε_pred interval and keep the best (default intervals {DEFAULT_SWEEP})",
        )
        parser.add_argument("--norm", choices=["l1", "l2", "huber"])
        parser.add_argument("--gamma-sparse", dest="gamma_sparse", type=float)
        parser.add_argument("--gamma-cont", dest="gamma_cont", type=float)
        parser.add_argument("--gamma-meanfree", dest="gamma_meanfree", type=float)
        parser.add_argument("--lr", type=float, help="Base learning rate (default 1e-3)")
        parser.add_argument("--epochs", type=int, help="Passes over the time indices (default 1000)")
        parser.add_argument("--minibatch", help="Residuals per step, or 'full' (default)")
        parser.add_argument(
            "--no-per-scale-lr", dest="per_scale_lr", action="store_false", default=None, help="Use lr_base for every scale"
        )
        parser.add_argument("--log-every", dest="log_every", type=int)

    def run(self, **options):
        cfg = self.load_config(options)
        ansatz_cfg, loss_cfg, train_cfg = cfg.ansatz(), cfg.loss(), cfg.training()
        ds = load_dataset(options["dataset"])
        out = cfg["output_dir"]
        out.mkdir(parents=True, exist_ok=True)
        metadata = {"scheme": cfg.scheme.value, "seed": train_cfg.seed}

        try:
            model, history = train(ds, ansatz_cfg, loss_cfg, train_cfg, cfg.scheme)
        except DivergenceError as exc:
            if exc.last_finite_state is not None:
                model = AnsatzModel(ansatz_cfg, seed=train_cfg.seed).bind_physics(ds.spec, ds.grid)
                model.load_state_dict(exc.last_finite_state)
                save_checkpoint(model, out / "checkpoint.diverged.kac", metadata)
                logger.error("Training diverged at %s; last finite state saved", exc.path)
            raise

        save_checkpoint(model, out / "checkpoint.kac", metadata)
        history.write_csv(out / "history.csv")
        final = history.final_loss
        summary = f"final loss {final:.6e}" if final is not None else "no iterations"
        self.report(f"Wrote {out / 'checkpoint.kac'} and {out / 'history.csv'} ({summary})")

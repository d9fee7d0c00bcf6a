from pathlib import Path

from django.core.management.base import CommandError

from ...solver import generate_dataset, save_dataset
from ._base import USAGE_ERROR, ExperimentCommand, logger


class Command(ExperimentCommand):
    help = "Simulates the kinetic system and writes a KDS1 dataset."

    config_flags = ("epsilon", "nx", "nv", "nt", "dt", "stride_x", "stride_t", "sigma_s", "sigma_a", "source")

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--eps", dest="epsilon", type=float, help="Knudsen number ε in (0, 1]")
        parser.add_argument("--nx", type=int, help="Cells of the generation grid (default 200)")
        parser.add_argument("--nv", type=int, help="Gauss-Legendre velocity nodes (default 16)")
        parser.add_argument("--nt", type=int, help="Fine time slices including t=0 (default 56)")
        parser.add_argument("--dt", type=float, help="Fine time step (default ½Δx²)")
        parser.add_argument("--stride-x", dest="stride_x", type=int, help="Spatial subsampling stride (default 1)")
        parser.add_argument("--stride-t", dest="stride_t", type=int, help="Temporal subsampling stride (default 1)")
        parser.add_argument("--sigma-s", dest="sigma_s", help="Scattering σS(x), e.g. const:1 or poly:4,0,100")
        parser.add_argument("--sigma-a", dest="sigma_a", help="Absorption σA(x) (default const:0)")
        parser.add_argument("--source", help="Source G(x) (default const:0)")
        parser.add_argument("--output", help="Dataset path (default <output-dir>/dataset.kds)")

    def run(self, **options):
        cfg = self.load_config(options)
        if cfg["epsilon"] is None:
            raise CommandError("--eps (or epsilon in the config) is required", returncode=USAGE_ERROR)
        grid = cfg.grid()
        spec = cfg.physics(grid)
        dt = cfg.time_step(grid)
        ds = generate_dataset(spec, grid, dt, cfg["nt"], cfg["stride_x"], cfg["stride_t"])

        path = Path(options.get("output") or cfg["output_dir"] / "dataset.kds")
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, path, metadata={"config": cfg.to_dict(), "dt_fine": dt})
        logger.info("Generated %d slices at epsilon=%g", ds.nt, spec.epsilon)
        self.report(f"Wrote {path}")

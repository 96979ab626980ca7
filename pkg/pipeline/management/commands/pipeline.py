from pipeline.management.base import FaceSculptCommand
from pipeline.runner import run_pipeline
from pipeline.serializers import load_config


class Command(FaceSculptCommand):
    help = "Translate landmarks, deform the mesh and stylize its texture in one run."
    config_required = True

    def add_command_arguments(self, parser):
        parser.add_argument("--scale", type=float, help="Deformation scale t in [0, 1].")
        parser.add_argument("--beta", type=float, help="Content loss weight.")
        parser.add_argument("--out", help="Output directory; overrides paths.output_dir.")

    def run(self, *args, **options):
        config = load_config(
            options["config"],
            seed=options.get("seed"),
            scale=options.get("scale"),
            beta=options.get("beta"),
            out=options.get("out"),
        )
        self.report(run_pipeline(config))

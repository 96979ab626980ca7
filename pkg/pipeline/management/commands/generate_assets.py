from pipeline.assets import generate_assets
from pipeline.management.base import FaceSculptCommand


class Command(FaceSculptCommand):
    help = "Write the synthetic smoke asset pack and a pipeline config that uses it."

    config_flags = ("seed",)

    def add_command_arguments(self, parser):
        parser.add_argument("--out", required=True, help="Asset directory.")
        parser.add_argument("--normal", type=int, default=200, help="Normal-face landmark sets.")
        parser.add_argument("--art", type=int, default=200, help="Art-face landmark sets.")
        parser.add_argument("--image-size", type=int, default=64)
        parser.add_argument("--texture-size", type=int, default=64)

    def run(self, *args, **options):
        paths = generate_assets(
            options["out"],
            n_normal=options["normal"],
            n_art=options["art"],
            image_size=options["image_size"],
            texture_size=options["texture_size"],
            seed=options.get("seed") or 0,
        )
        self.report({name: str(path) for name, path in paths.items()})

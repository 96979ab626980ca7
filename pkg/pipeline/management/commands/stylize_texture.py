import numpy as np

from meshes.obj import load_obj
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import extractor_spec, int_seed, load_projection, seed_streams, style_config
from rendering.images import read_image, write_image
from stylization.optimizer import STYLE_MODES, optimize_texture


class Command(FaceSculptCommand):
    help = "Optimize a texture so renders of the mesh carry the style of an image."

    def add_command_arguments(self, parser):
        parser.add_argument("mesh", help="Deformed OBJ mesh.")
        parser.add_argument("texture", help="Content texture PNG.")
        parser.add_argument("style", help="Style image PNG.")
        parser.add_argument("--projection", help="Projection JSON; defaults to an orthographic camera on the mesh.")
        parser.add_argument("--out", required=True, help="Stylized texture PNG.")
        parser.add_argument("--trace", help="Per-iteration loss CSV.")
        parser.add_argument("--beta", type=float, help="Content loss weight.")
        parser.add_argument("--mode", choices=STYLE_MODES, help="multiview renders or the flat texture map.")
        parser.add_argument("--iterations", type=int, help="RMSprop iterations.")

    def run(self, *args, **options):
        config = self.stage_config(options, beta=options.get("beta"))
        style = dict(config["style"])
        if options.get("mode"):
            style["mode"] = options["mode"]
        if options.get("iterations") is not None:
            style["iterations"] = options["iterations"]
        render = config["render"]
        stream = seed_streams(config["seed"])["style"]
        mesh = load_obj(options["mesh"])
        result = optimize_texture(
            mesh,
            read_image(options["texture"], size=render.get("texture_size")),
            read_image(options["style"]),
            load_projection(options.get("projection"), mesh, render["image_size"]),
            extractor_spec(config["extractor"]),
            style_config(style, render, int_seed(stream)),
            rng=np.random.default_rng(stream),
            trace_path=options.get("trace"),
        )
        path = write_image(result.texture, options["out"])
        self.report({"texture": str(path), "initial_loss": result.initial_loss, "final_loss": result.final_loss})

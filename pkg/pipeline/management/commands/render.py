from meshes.obj import load_obj
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import load_projection, render_gallery
from rendering.images import read_image


class Command(FaceSculptCommand):
    help = "Render a textured mesh from a grid of views into views/*.png and contact_sheet.png."

    def add_command_arguments(self, parser):
        parser.add_argument("mesh", help="OBJ mesh.")
        parser.add_argument("texture", help="Texture PNG.")
        parser.add_argument("--projection", help="Projection JSON; defaults to an orthographic camera on the mesh.")
        parser.add_argument("--out", required=True, help="Output directory.")
        parser.add_argument("--views", type=int, help="Number of views.")
        parser.add_argument("--size", type=int, help="Rendered image size in pixels.")

    def run(self, *args, **options):
        render = dict(self.stage_config(options)["render"])
        if options.get("views"):
            render["contact_sheet_views"] = options["views"]
        if options.get("size"):
            render["image_size"] = options["size"]
        mesh = load_obj(options["mesh"])
        proj = load_projection(options.get("projection"), mesh, render["image_size"])
        views, sheet = render_gallery(mesh, read_image(options["texture"]), proj, render, options["out"])
        self.report({"views": [str(view) for view in views], "contact_sheet": str(sheet)})

from deformation.solver import run_deformation
from landmarks.io import read_landmarks
from meshes.obj import load_obj, save_obj
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import deform_config, load_projection


class Command(FaceSculptCommand):
    help = "Deform a face mesh so its landmark vertices project onto target landmarks."

    def add_command_arguments(self, parser):
        parser.add_argument("mesh", help="OBJ mesh with a landmark sidecar.")
        parser.add_argument("landmarks", help="Target landmark CSV in the projection's pixel frame.")
        parser.add_argument("--projection", help="Projection JSON; defaults to an orthographic camera on the mesh.")
        parser.add_argument("--out", required=True, help="Deformed OBJ mesh.")
        parser.add_argument("--energy-log", help="Per-iteration energy CSV.")

    def run(self, *args, **options):
        config = self.stage_config(options)
        mesh = load_obj(options["mesh"])
        proj = load_projection(options.get("projection"), mesh, config["render"]["image_size"])
        result = run_deformation(
            mesh,
            read_landmarks(options["landmarks"]),
            proj,
            deform_config(config["deform"]),
            energy_log=options.get("energy_log"),
        )
        path = save_obj(mesh.with_vertices(result.vertices), options["out"])
        self.report(
            {
                "mesh": str(path),
                "initial_energy": result.initial_energy,
                "final_energy": result.final_energy,
                "best_iteration": result.best_iteration,
                "converged": result.converged,
            }
        )

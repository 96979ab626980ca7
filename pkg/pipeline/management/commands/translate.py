from landmarks.io import read_landmarks, write_landmarks
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import Statistics, translate_landmarks
from translation.networks import TranslationModel


class Command(FaceSculptCommand):
    help = "Give a portrait's landmarks the geometry style of an exemplar."

    def add_command_arguments(self, parser):
        parser.add_argument("input", help="Portrait landmark CSV.")
        parser.add_argument("exemplar", help="Exemplar landmark CSV.")
        parser.add_argument("--stats", required=True, help="Directory written by fit_stats.")
        parser.add_argument("--model", required=True, help="Directory written by train.")
        parser.add_argument("--scale", type=float, help="Deformation scale t in [0, 1].")
        parser.add_argument("--out", required=True, help="Translated landmarks in the aligned frame.")
        parser.add_argument("--image-out", help="Translated landmarks mapped back onto the input's image frame.")

    def run(self, *args, **options):
        config = self.stage_config(options, scale=options.get("scale"))
        stats = Statistics.load(options["stats"])
        model = TranslationModel.load(options["model"])
        aligned, image = translate_landmarks(
            model,
            stats,
            read_landmarks(options["input"]),
            read_landmarks(options["exemplar"]),
            config["translate"]["scale"],
        )
        written = {"aligned": str(write_landmarks(aligned, options["out"]))}
        if options.get("image_out"):
            written["image"] = str(write_landmarks(image, options["image_out"]))
        self.report({**written, "scale": config["translate"]["scale"]})

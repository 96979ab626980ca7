from landmarks.io import read_landmark_dir
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import Statistics, int_seed, seed_streams, train_model


class Command(FaceSculptCommand):
    help = "Train the landmark translation network: autoencoder, style classifier, then translation."

    def add_command_arguments(self, parser):
        parser.add_argument("normal", help="Directory of normal-face landmark CSVs.")
        parser.add_argument("art", help="Directory of art-face landmark CSVs.")
        parser.add_argument("--stats", required=True, help="Directory written by fit_stats.")
        parser.add_argument("--out", required=True, help="Model directory.")
        parser.add_argument("--epochs", type=int, help="Translation epochs.")
        parser.add_argument(
            "--without-classification",
            action="store_true",
            help="Drop the style classification loss (lambda_class = 0).",
        )

    def run(self, *args, **options):
        config = self.stage_config(options)
        section = dict(config["train"])
        if options.get("epochs") is not None:
            section["epochs"] = options["epochs"]
        if options["without_classification"]:
            section["lambda_class"] = 0.0
        stats = Statistics.load(options["stats"])
        normal = read_landmark_dir(options["normal"])
        art = read_landmark_dir(options["art"])
        model, history = train_model(normal, art, stats, section, int_seed(seed_streams(config["seed"])["train"]))
        directory = model.save(options["out"])
        final = history["translation"][-1] if history["translation"] else {}
        self.report(
            {
                "model": str(directory),
                "classifier_accuracy": history["classifier_accuracy"],
                "final_epoch": final,
            }
        )

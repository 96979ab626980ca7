from django.core.management.base import CommandError

from landmarks.alignment import align_corpus
from landmarks.io import read_landmark_dir
from landmarks.statistics import compute_fid, fit_pca
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import Statistics, fit_average, int_seed, seed_streams
from translation.networks import TranslationModel
from translation.training import translation_fid


class Command(FaceSculptCommand):
    help = "FID between two landmark corpora over PCA coefficients."

    def add_command_arguments(self, parser):
        parser.add_argument("a", help="Directory of landmark CSVs.")
        parser.add_argument("b", help="Directory of landmark CSVs.")
        parser.add_argument("--stats", help="Statistics directory; without it a PCA is fitted on both corpora.")
        parser.add_argument(
            "--model",
            help="Translation model; A is then translated with random exemplars from B before comparing.",
        )
        parser.add_argument("--components", type=int, help="PCA components when no --stats is given.")

    def coefficients(self, stats_dir, a, b, components, passes):
        if stats_dir:
            stats = Statistics.load(stats_dir)
            return stats.pca, align_corpus(a, stats.average), align_corpus(b, stats.average)
        average = fit_average(a, passes)
        aligned_a, aligned_b = align_corpus(a, average), align_corpus(b, average)
        return fit_pca(aligned_a + aligned_b, components), aligned_a, aligned_b

    def run(self, *args, **options):
        if options.get("model") and not options.get("stats"):
            raise CommandError("--model needs --stats: the model is tied to the PCA it was trained on.")
        config = self.stage_config(options)
        components = options.get("components") or config["stats"]["pca_components"]
        a = read_landmark_dir(options["a"])
        b = read_landmark_dir(options["b"])
        passes = config["stats"]["average_face_passes"]
        pca, aligned_a, aligned_b = self.coefficients(options.get("stats"), a, b, components, passes)
        if options.get("model"):
            model = TranslationModel.load(options["model"])
            fid = translation_fid(model, pca, aligned_a, aligned_b, int_seed(seed_streams(config["seed"])["stats"]))
        else:
            fid = compute_fid(pca.project_many(aligned_a), pca.project_many(aligned_b))
        self.stdout.write(str(round(max(fid, 0.0), 6)))

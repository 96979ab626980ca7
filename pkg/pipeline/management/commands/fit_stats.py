import numpy as np

from landmarks.io import read_landmark_dir
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import fit_statistics, int_seed, seed_streams


class Command(FaceSculptCommand):
    help = "Fit the average face, the landmark PCA model and the art-style clusters."

    def add_command_arguments(self, parser):
        parser.add_argument("normal", help="Directory of normal-face landmark CSVs.")
        parser.add_argument("art", help="Directory of art-face landmark CSVs.")
        parser.add_argument("--out", required=True, help="Statistics directory.")
        parser.add_argument("--components", type=int, help="Number of PCA components.")
        parser.add_argument("--clusters", type=int, help="Number of K-means style clusters.")

    def run(self, *args, **options):
        config = self.stage_config(options)
        section = dict(config["stats"])
        if options.get("components") is not None:
            section["pca_components"] = options["components"]
        if options.get("clusters") is not None:
            section["clusters"] = options["clusters"]
        normal = read_landmark_dir(options["normal"])
        art = read_landmark_dir(options["art"])
        stats = fit_statistics(normal, art, section, int_seed(seed_streams(config["seed"])["stats"]))
        directory = stats.save(options["out"])
        labels = stats.clusters.assign_many(stats.coefficients(art))
        self.report(
            {
                "stats": str(directory),
                "pca_components": stats.pca.n_components,
                "clusters": stats.clusters.k,
                "cluster_sizes": np.bincount(labels, minlength=stats.clusters.k).tolist(),
                "inertia": stats.clusters.inertia,
            }
        )

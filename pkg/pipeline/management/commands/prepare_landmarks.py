from pathlib import Path

from landmarks.alignment import align_corpus
from landmarks.io import read_landmark_dir, write_landmark_dir, write_landmarks
from pipeline.management.base import FaceSculptCommand
from pipeline.runner import fit_average


class Command(FaceSculptCommand):
    help = "Build the normalized average face from a landmark corpus and align corpora to it."

    def add_command_arguments(self, parser):
        parser.add_argument("corpus", help="Directory of normal-face landmark CSVs; the average is built from it.")
        parser.add_argument("others", nargs="*", help="Further corpora to align to the same average.")
        parser.add_argument("--out", required=True, help="Writes average.csv and aligned/<corpus name>/.")

    def run(self, *args, **options):
        stats = self.stage_config(options)["stats"]
        out = Path(options["out"])
        corpora = [Path(options["corpus"])] + [Path(other) for other in options["others"]]
        samples = {directory: read_landmark_dir(directory) for directory in corpora}
        average = fit_average(samples[corpora[0]], stats["average_face_passes"])
        write_landmarks(average, out / "average.csv")
        aligned = {}
        for directory, corpus in samples.items():
            target = out / "aligned" / directory.name
            write_landmark_dir(align_corpus(corpus, average), target, prefix=directory.name)
            aligned[directory.name] = {"samples": len(corpus), "dir": str(target)}
        self.report({"average": str(out / "average.csv"), "aligned": aligned})

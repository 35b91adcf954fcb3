import argparse
import json
import multiprocessing
import os

from tqdm import tqdm

from ucf.manifest import RunStatus, verify_manifest


def verify_subdirectory(subdir: str) -> dict:
    try:
        return verify_manifest(subdir)
    except Exception as e:
        # an unreadable manifest counts as tampered
        return {"status": RunStatus.TAMPERED.value, "missing": [], "tampered": [], "error": str(e)}


def classify_and_write_json(src_folder: str, output_json: str, processes: int) -> dict:
    subs = sorted(
        os.path.join(src_folder, d)
        for d in os.listdir(src_folder)
        if os.path.isdir(os.path.join(src_folder, d))
    )

    if processes > 1 and len(subs) > 1:
        with multiprocessing.Pool(processes) as pool:
            results = list(tqdm(pool.imap(verify_subdirectory, subs), total=len(subs), desc="Verifying"))
    else:
        results = [verify_subdirectory(s) for s in tqdm(subs, desc="Verifying")]

    cats: dict[str, list[str]] = {status.value: [] for status in RunStatus}
    details = {}
    for subdir, result in zip(subs, results):
        run_id = os.path.basename(subdir)
        cats[result["status"]].append(run_id)
        if result["status"] != RunStatus.OK.value:
            details[run_id] = result

    print("Verification summary:")
    for cat, ids in cats.items():
        print(f"  {cat}: {len(ids)}")

    summary = {"total": len(subs), "categories": cats, "details": details}
    with open(output_json, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=4)
        f.write("\n")
    print(f"Summary JSON written to '{output_json}'")
    return summary


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Check every run directory's artifacts against its manifest.json."
    )
    parser.add_argument("target_folder", help="Folder whose subdirectories are run output dirs.")
    parser.add_argument("output_json", help="Path for summary JSON output.")
    parser.add_argument("--processes", type=int, default=4, help="Number of worker processes.")
    args = parser.parse_args(argv)

    if not os.path.isdir(args.target_folder):
        parser.error(f"Folder not found: {args.target_folder}")
    if args.processes < 1:
        parser.error("--processes must be >= 1")

    classify_and_write_json(args.target_folder, args.output_json, args.processes)


if __name__ == "__main__":
    multiprocessing.freeze_support()
    main()

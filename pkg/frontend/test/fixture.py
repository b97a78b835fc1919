"""Builds a small trained bundle and serves it; used by the console's
integration test. Usage: python3 fixture.py <workdir> <port> <token>"""

import sys

from exrec import data, evaluate, model, service, uncertainty


def main() -> None:
    workdir, port, token = sys.argv[1], int(sys.argv[2]), sys.argv[3]
    corpus = data.synth_generate(n_users=8, n_days=28, seed=6)
    cfg = evaluate.ExperimentConfig(epochs=6, lr=3e-3, seeds=(0,))
    mcfg = evaluate.model_config_for(corpus, cfg)
    fields = corpus.schema.select("demographic")
    stats = data.profile_stats(corpus, fields)
    windows = data.make_windows(corpus, 3, stats=stats)
    trained = model.train(windows, mcfg, epochs=6, seed=0, lr=3e-3)
    # a near-1 threshold keeps every step uncertain, so reviews always queue
    dist = uncertainty.marginal_pdf(uncertainty.DirichletParams(1, 1, 1),
                                    grid_size=201)
    dist.level = 0.999
    dist.theta = uncertainty.threshold(dist, 0.999)
    bundle_dir = f"{workdir}/bundle"
    service.save_bundle(bundle_dir, trained.params, mcfg, dist, corpus, stats)
    config = service.ServiceConfig(port=port, data_dir=f"{workdir}/data",
                                   bundle_dir=bundle_dir, token=token)
    service.serve_forever(config)


if __name__ == "__main__":
    main()

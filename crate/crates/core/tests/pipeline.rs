use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rirkit::codec::{train_rvq, Codegram, RvqCodebooks, RvqConfig};
use rirkit::dsp::{analyze, read_wav, write_wav};
use rirkit::manifest::{Manifest, ManifestRow};
use rirkit::params::{default_grids, QuantizedParams};
use rirkit::synth::{coherent_grid_target, synth_rir, SynthTarget};

#[test]
fn synth_analyse_quantize_tokenise_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let grids = default_grids();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut corpus = Vec::new();
    let mut rows = Vec::new();
    for i in 0..3 {
        let target = coherent_grid_target(&mut rng);
        let (w, report) = synth_rir(&SynthTarget::new(target.clone(), i)).unwrap();
        assert!(report.iterations >= 1);

        let path = format!("rir_{i}.wav");
        write_wav(tmp.path().join(&path), &w).unwrap();
        let back = read_wav(tmp.path().join(&path)).unwrap();
        let params = analyze(&back).unwrap();
        let t30 = params.broadband.t30_s.unwrap();
        let want = target.broadband.t30_s.unwrap();
        assert!((t30 - want).abs() / want < 0.1, "{t30} vs {want}");

        let q = QuantizedParams::from_params(&params, &grids).unwrap();
        assert_eq!(QuantizedParams::from_indices(&q.indices(), &grids).unwrap(), q);
        corpus.push(back);
        rows.push(ManifestRow::valid(format!("rir_{i}"), path));
    }

    let manifest = Manifest::new(rows).unwrap().with_base_dir(tmp.path());
    manifest.save(tmp.path().join("m.jsonl")).unwrap();
    let loaded = Manifest::load(tmp.path().join("m.jsonl")).unwrap();
    assert_eq!(loaded.ids(), manifest.ids());

    let cfg = RvqConfig { num_stages: 2, codebook_size: 8, frame_len: 256, iterations: 5, seed: 1 };
    let codec = train_rvq(&corpus, &cfg).unwrap();
    codec.save(tmp.path().join("c.rvq")).unwrap();
    let codec = RvqCodebooks::load(tmp.path().join("c.rvq")).unwrap();

    let codes = codec.encode(&corpus[0]).unwrap();
    codes.save(tmp.path().join("a.cgr")).unwrap();
    codes.save(tmp.path().join("a.json")).unwrap();
    assert_eq!(Codegram::load(tmp.path().join("a.cgr")).unwrap(), codes);
    assert_eq!(Codegram::load(tmp.path().join("a.json")).unwrap(), codes);

    let decoded = codec.decode(&codes).unwrap();
    assert_eq!(decoded.len(), codec.frames_for(corpus[0].len()) * cfg.frame_len);
    let err: f64 = decoded.samples().iter().zip(corpus[0].samples()).map(|(a, b)| (a - b).powi(2)).sum();
    let energy: f64 = corpus[0].samples().iter().map(|x| x * x).sum();
    assert!(err < energy, "reconstruction worse than silence");
}

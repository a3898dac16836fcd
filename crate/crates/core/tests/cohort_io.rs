use gpsmatch::data::{load_cohort_canonical, read_cohort, save_cohort, ColumnMapping};
use gpsmatch::simgen::{sample_cohort, SimConfig};
use gpsmatch::Error;

#[test]
fn load_write_load_is_exact() {
    let cfg = SimConfig {
        n1: 40,
        eta: 3.5,
        df: Some(7.0),
        ..SimConfig::default()
    };
    let c = sample_cohort(&cfg, 9).unwrap();
    let y: Vec<f64> = (0..c.n()).map(|i| (i as f64).sqrt() / 3.0).collect();
    let c = c.with_outcomes(y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    save_cohort(&c, &path).unwrap();
    let back = load_cohort_canonical(&path).unwrap();
    assert_eq!(back, c);
    let again = dir.path().join("d.csv");
    save_cohort(&back, &again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn custom_columns_and_labels() {
    let text = "arm,a,b\nctl,1,2\ntrt,3,4\nctl,5,6\ntrt,7,8\nzzz,9,1\nzzz,2,3\n";
    let mapping = ColumnMapping {
        id: None,
        treatment: "arm".into(),
        covariates: Some(vec!["b".into()]),
        outcome: None,
    };
    let c = read_cohort(text.as_bytes(), &mapping).unwrap();
    assert_eq!(c.labels(), ["ctl", "trt", "zzz"]);
    assert_eq!(c.p(), 1);
    assert_eq!(c.unit_ids()[0], "1");
}

#[test]
fn malformed_input_is_rejected() {
    let m = ColumnMapping::default();
    let missing = "id,treatment,x1\na,1,\nb,1,2\nc,2,3\nd,2,4\ne,3,1\nf,3,2\n";
    assert!(matches!(
        read_cohort(missing.as_bytes(), &m),
        Err(Error::MissingCovariate { .. })
    ));
    let bad = "id,treatment,x1\na,1,q\nb,1,2\nc,2,3\nd,2,4\ne,3,1\nf,3,2\n";
    assert!(matches!(
        read_cohort(bad.as_bytes(), &m),
        Err(Error::NonNumeric { .. })
    ));
    let dup = "id,treatment,x1\na,1,1\na,1,2\nc,2,3\nd,2,4\ne,3,1\nf,3,2\n";
    assert!(matches!(
        read_cohort(dup.as_bytes(), &m),
        Err(Error::DuplicateId(_))
    ));
    let small = "id,treatment,x1\na,1,1\nb,1,2\nc,2,3\nd,3,4\ne,3,1\n";
    assert!(matches!(
        read_cohort(small.as_bytes(), &m),
        Err(Error::GroupTooSmall { .. })
    ));
}

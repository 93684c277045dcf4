use zicount::dataset::{read_csv, trajan, CsvSchema};

#[test]
fn csv_round_trip_keeps_the_data() {
    let d = trajan();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajan.csv");
    d.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let schema = CsvSchema { response: d.response_name.clone(), factors: vec!["photoperiod".into(), "bap".into()] };
    let back = read_csv(&path, &schema).unwrap();
    assert_eq!(back.response, d.response);
    assert_eq!(back.fingerprint(), d.fingerprint());
}

#[test]
fn fingerprint_tracks_the_response() {
    let d = trajan();
    let mut y = d.response.clone();
    y[0] += 1;
    assert_ne!(d.with_response(y).unwrap().fingerprint(), d.fingerprint());
}

#[test]
fn cells_partition_the_rows() {
    let d = trajan();
    let cells = d.cell_summaries();
    assert_eq!(cells.len(), 8);
    assert_eq!(cells.iter().map(|c| c.n).sum::<usize>(), 270);
}

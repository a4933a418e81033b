//! Fusion-graph structure laws and batched execution.

mod common;

use common::{random_tensor, rng};
use hada::gatv2::{multi_head_forward, GatLayer};
use hada::graph::{batch_graphs, build_graph, FusionGraph, GraphLayout};
use hada::numerics::Tensor;
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("m{i}")).collect()
}

proptest! {
    #[test]
    fn edge_count_law(patches in prop::collection::vec(0usize..9, 1..=3)) {
        let rows: Vec<usize> = patches.iter().map(|n| n + 1).collect();
        let l = GraphLayout::for_item(&ids(rows.len()), &rows).unwrap();
        let total: usize = rows.iter().sum();
        prop_assert_eq!(l.edges.len(), rows.len() * total);
        prop_assert_eq!(l.num_nodes, total);
        for &c in &l.cls {
            let incoming: Vec<usize> =
                l.edges.iter().filter(|e| e.1 == c).map(|e| e.0).collect();
            prop_assert_eq!(incoming, (0..total).collect::<Vec<_>>());
        }
        prop_assert!(l.edges.iter().all(|e| l.cls.contains(&e.1)));
    }

    #[test]
    fn batched_edges_stay_inside_items(
        items in prop::collection::vec(prop::collection::vec(1usize..5, 2), 1..5)
    ) {
        let layouts: Vec<GraphLayout> = items
            .iter()
            .map(|rows| GraphLayout::for_item(&ids(2), rows).unwrap())
            .collect();
        let b = GraphLayout::batch(&layouts).unwrap();
        prop_assert_eq!(b.num_items(), items.len());
        let item_of = |n: usize| b.item_offsets.windows(2).position(|w| w[0] <= n && n < w[1]);
        for &(s, d) in &b.edges {
            prop_assert_eq!(item_of(s), item_of(d));
        }
        prop_assert_eq!(
            b.edges.len(),
            layouts.iter().map(|l| l.edges.len()).sum::<usize>()
        );
    }
}

#[test]
fn edge_law_for_one_two_and_three_models() {
    for (rows, want) in [(vec![4], 4), (vec![4, 3], 14), (vec![2, 1, 5], 24)] {
        let l = GraphLayout::for_item(&ids(rows.len()), &rows).unwrap();
        assert_eq!(l.edges.len(), want, "{rows:?}");
    }
}

fn item(seed: u64, rows: &[usize], d: usize) -> FusionGraph<f64> {
    let mut r = rng(seed);
    let parts: Vec<(String, Tensor<f64>)> = rows
        .iter()
        .enumerate()
        .map(|(k, &n)| (format!("m{k}"), random_tensor(&mut r, n, d)))
        .collect();
    build_graph(&parts).unwrap()
}

#[test]
fn permuting_patch_rows_permutes_nodes_and_keeps_edges() {
    let mut r = rng(3);
    let a = random_tensor(&mut r, 5, 4);
    let b = random_tensor(&mut r, 3, 4);
    let perm = [0usize, 3, 1, 4, 2];
    let a_perm = Tensor::from_rows(
        &perm
            .iter()
            .map(|&p| a.row_slice(p).to_vec())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let g = build_graph(&[("m0".into(), a), ("m1".into(), b.clone())]).unwrap();
    let h = build_graph(&[("m0".into(), a_perm), ("m1".into(), b)]).unwrap();
    assert_eq!(g.layout, h.layout);
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(h.nodes.row_slice(new), g.nodes.row_slice(old));
    }
}

#[test]
fn batched_gat_matches_per_item_execution() {
    let mut r = rng(9);
    let layer = GatLayer::<f64>::init(&mut r, 6, 8, 2).unwrap();
    let graphs: Vec<FusionGraph<f64>> = [[3, 2], [1, 5], [4, 1], [2, 2]]
        .iter()
        .enumerate()
        .map(|(k, rows)| item(100 + k as u64, rows, 6))
        .collect();
    let batched = multi_head_forward(&layer, &batch_graphs(&graphs).unwrap()).unwrap();
    let mut row = 0;
    for g in &graphs {
        let single = multi_head_forward(&layer, g).unwrap();
        for k in 0..single.rows() {
            for (x, y) in single.row_slice(k).iter().zip(batched.row_slice(row)) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
            row += 1;
        }
    }
    assert_eq!(row, batched.rows());
}

#[test]
fn batch_of_one_is_the_item() {
    let g = item(1, &[3, 2], 4);
    assert_eq!(batch_graphs(std::slice::from_ref(&g)).unwrap(), g);
}

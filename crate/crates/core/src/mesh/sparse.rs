use super::{DensityMesh, MeshError};

/// Occupied cells of a site's deposit, strictly increasing by cell index.
///
/// Wire layout, little-endian: `u32 mesh_size, u64 count`, then `count`
/// records of `(u64 index, f64 value)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMeshPayload {
    pub mesh_size: u32,
    pub cells: Vec<(u64, f64)>,
}

const HEADER: usize = 12;
const RECORD: usize = 16;

/// Bytes of the same record format listing every cell.
pub fn dense_wire_size(mesh_size: usize) -> usize {
    HEADER + RECORD * mesh_size.pow(3)
}

pub fn sparse_encode(mesh: &DensityMesh) -> SparseMeshPayload {
    let cells = mesh
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i as u64, *v))
        .collect();
    SparseMeshPayload { mesh_size: mesh.size as u32, cells }
}

/// Rebuilds the dense mesh; every unlisted cell is zero.
pub fn sparse_decode(payload: &SparseMeshPayload, expected_size: usize) -> Result<DensityMesh, MeshError> {
    if payload.mesh_size as usize != expected_size {
        return Err(MeshError::SizeMismatch { expected: expected_size, got: payload.mesh_size as usize });
    }
    let mut mesh = DensityMesh::zeros(expected_size);
    mesh.accumulate_sparse(payload)?;
    Ok(mesh)
}

impl SparseMeshPayload {
    pub fn validate(&self) -> Result<(), MeshError> {
        let cells = (self.mesh_size as usize).pow(3);
        let mut prev: Option<u64> = None;
        for (position, &(index, _)) in self.cells.iter().enumerate() {
            if index as usize >= cells {
                return Err(MeshError::IndexOutOfRange { index, cells });
            }
            if prev.is_some_and(|p| index <= p) {
                return Err(MeshError::NotIncreasing { position });
            }
            prev = Some(index);
        }
        Ok(())
    }

    pub fn wire_size(&self) -> usize {
        HEADER + RECORD * self.cells.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_size());
        out.extend_from_slice(&self.mesh_size.to_le_bytes());
        out.extend_from_slice(&(self.cells.len() as u64).to_le_bytes());
        for (i, v) in &self.cells {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MeshError> {
        if bytes.len() < HEADER {
            return Err(MeshError::Truncated(format!("{} header bytes", bytes.len())));
        }
        let mesh_size = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let body = &bytes[HEADER..];
        let need = (count as u128) * RECORD as u128;
        if body.len() as u128 != need {
            return Err(MeshError::Truncated(format!("{} records need {need} bytes, have {}", count, body.len())));
        }
        let cells = body
            .chunks_exact(RECORD)
            .map(|r| {
                (
                    u64::from_le_bytes(r[0..8].try_into().unwrap()),
                    f64::from_le_bytes(r[8..16].try_into().unwrap()),
                )
            })
            .collect();
        let payload = SparseMeshPayload { mesh_size, cells };
        payload.validate()?;
        Ok(payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SlabDomain;
    use crate::mesh::{cic_assign, slab_cells};
    use crate::tree::Body;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_out_of_range_and_unsorted() {
        let bad = SparseMeshPayload { mesh_size: 2, cells: vec![(8, 1.0)] };
        assert!(matches!(bad.validate(), Err(MeshError::IndexOutOfRange { .. })));
        let bad = SparseMeshPayload { mesh_size: 2, cells: vec![(3, 1.0), (3, 1.0)] };
        assert!(matches!(bad.validate(), Err(MeshError::NotIncreasing { position: 1 })));
        let ok = SparseMeshPayload { mesh_size: 2, cells: vec![(1, 1.0), (7, 2.0)] };
        assert!(matches!(sparse_decode(&ok, 4), Err(MeshError::SizeMismatch { .. })));
    }

    #[test]
    fn truncated_bytes_are_rejected() {
        let p = SparseMeshPayload { mesh_size: 4, cells: vec![(1, 1.0), (9, 0.5)] };
        let b = p.to_bytes();
        assert_eq!(SparseMeshPayload::from_bytes(&b).unwrap(), p);
        assert!(SparseMeshPayload::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(SparseMeshPayload::from_bytes(&b[..5]).is_err());
    }

    #[test]
    fn three_slab_exchange_is_about_a_third_of_dense() {
        let n = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bodies: Vec<Body> = (0..32768)
            .map(|i| Body { id: i, pos: [rng.gen(), rng.gen(), rng.gen()], mass: 1.0 / 32768.0 })
            .collect();
        let slabs = SlabDomain::equal_partition(3);
        for s in &slabs {
            let mine: Vec<Body> = bodies.iter().filter(|b| s.contains_x(b.pos[0])).copied().collect();
            let mesh = cic_assign(&mine, n, slab_cells(s.lo, s.hi, n)).unwrap();
            let ratio = sparse_encode(&mesh).wire_size() as f64 / dense_wire_size(n) as f64;
            assert!((0.28..=0.39).contains(&ratio), "site {}: {ratio}", s.site_id);
        }
    }

    #[test]
    fn sum_of_site_payloads_equals_global_deposit() {
        let n = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bodies: Vec<Body> = (0..5000)
            .map(|i| Body { id: i, pos: [rng.gen(), rng.gen(), rng.gen()], mass: 1.0 })
            .collect();
        let global = cic_assign(&bodies, n, 0..n).unwrap();
        let mut assembled = DensityMesh::zeros(n);
        for s in &SlabDomain::equal_partition(3) {
            let mine: Vec<Body> = bodies.iter().filter(|b| s.contains_x(b.pos[0])).copied().collect();
            let p = sparse_encode(&cic_assign(&mine, n, slab_cells(s.lo, s.hi, n)).unwrap());
            let wire = SparseMeshPayload::from_bytes(&p.to_bytes()).unwrap();
            assembled.accumulate_sparse(&wire).unwrap();
        }
        for (a, g) in assembled.values.iter().zip(&global.values) {
            assert!((a - g).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn round_trip_reproduces_mesh(
            cells in proptest::collection::btree_map(0u64..512, 1e-6f64..10.0, 0..200)
        ) {
            let mut mesh = DensityMesh::zeros(8);
            for (i, v) in &cells {
                mesh.values[*i as usize] = *v;
            }
            let p = sparse_encode(&mesh);
            prop_assert_eq!(p.cells.len(), cells.len());
            let back = sparse_decode(&SparseMeshPayload::from_bytes(&p.to_bytes()).unwrap(), 8).unwrap();
            prop_assert_eq!(back.values, mesh.values);
        }
    }
}

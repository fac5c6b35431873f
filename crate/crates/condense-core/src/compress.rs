//! Compression models over teacher embeddings: PCA, a contrastively
//! trained encoder pair (CE), and the conditional autoencoder (ConAE)
//! whose decoder maps codes back to the teacher space.
//!
//! All encoders are plain linear maps without bias or nonlinearity.
//! Queries and documents get separate encoder matrices; the ConAE decoder
//! is shared across sides by default, with an optional second decoder for
//! the two-decoder variant.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal, DenseMatrix};
use crate::pca::PcaModel;
use crate::store::EmbeddingStore;

pub const MODEL_MAGIC: &[u8; 8] = b"DCMDL1\0\0";
pub const MODEL_VERSION: u32 = 1;

/// Which encoder a vector goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Document,
}

/// Two bias-free linear layers, one per side.
#[derive(Debug, Clone, PartialEq)]
pub struct CeModel {
    pub w_query: DenseMatrix,
    pub w_doc: DenseMatrix,
}

/// Per-side encoders plus a decoder back to the teacher space. `dec_doc`
/// is only present in the two-decoder variant; otherwise `dec` serves
/// both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ConaeModel {
    pub enc_query: DenseMatrix,
    pub enc_doc: DenseMatrix,
    pub dec: DenseMatrix,
    pub dec_doc: Option<DenseMatrix>,
}

/// Side-aware linear encoding, shared by the two trained model kinds.
pub trait Encoder {
    fn weights(&self, side: Side) -> &DenseMatrix;

    fn encode(&self, x: &[f64], side: Side) -> Result<Vec<f64>> {
        self.weights(side).mat_vec(x)
    }

    fn input_dim(&self) -> usize {
        self.weights(Side::Query).cols()
    }

    fn output_dim(&self) -> usize {
        self.weights(Side::Query).rows()
    }
}

impl Encoder for CeModel {
    fn weights(&self, side: Side) -> &DenseMatrix {
        match side {
            Side::Query => &self.w_query,
            Side::Document => &self.w_doc,
        }
    }
}

impl Encoder for ConaeModel {
    fn weights(&self, side: Side) -> &DenseMatrix {
        match side {
            Side::Query => &self.enc_query,
            Side::Document => &self.enc_doc,
        }
    }
}

impl ConaeModel {
    /// The decoder applied to a side's codes: `dec` everywhere unless the
    /// two-decoder variant supplies a document-specific one.
    pub fn decoder(&self, side: Side) -> &DenseMatrix {
        match side {
            Side::Query => &self.dec,
            Side::Document => self.dec_doc.as_ref().unwrap_or(&self.dec),
        }
    }

    /// dec · code, back to the teacher dimension.
    pub fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        self.dec.mat_vec(code)
    }

    pub fn has_two_decoders(&self) -> bool {
        self.dec_doc.is_some()
    }
}

/// Orthonormal-projection initialization, shared by CE and ConAE: both
/// side encoders start as the same transposed orthonormal basis, so the
/// student begins as a norm-preserving projection of the teacher space,
/// and the decoder starts as that basis (the encoder's transpose).
fn init_projection(k: usize, l: usize, seed: u64) -> Result<(DenseMatrix, DenseMatrix)> {
    if l > k {
        return Err(Error::dimension("init target dim", k, l));
    }
    let basis = random_orthonormal(k, l, seed)?;
    Ok((basis.transpose(), basis))
}

pub fn init_ce(k: usize, l: usize, seed: u64) -> Result<CeModel> {
    let (enc, _) = init_projection(k, l, seed)?;
    Ok(CeModel {
        w_query: enc.clone(),
        w_doc: enc,
    })
}

pub fn init_conae(k: usize, l: usize, seed: u64, two_decoders: bool) -> Result<ConaeModel> {
    let (enc, basis) = init_projection(k, l, seed)?;
    Ok(ConaeModel {
        enc_query: enc.clone(),
        enc_doc: enc,
        dec_doc: two_decoders.then(|| basis.clone()),
        dec: basis,
    })
}

/// Any trained or fitted compressor, for uniform store compression and
/// persistence.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressorModel {
    Pca(PcaModel),
    Ce(CeModel),
    Conae(ConaeModel),
}

impl CompressorModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CompressorModel::Pca(_) => "pca",
            CompressorModel::Ce(_) => "ce",
            CompressorModel::Conae(m) if m.has_two_decoders() => "conae-2dec",
            CompressorModel::Conae(_) => "conae",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CompressorModel::Pca(m) => m.input_dim(),
            CompressorModel::Ce(m) => m.input_dim(),
            CompressorModel::Conae(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            CompressorModel::Pca(m) => m.output_dim(),
            CompressorModel::Ce(m) => m.output_dim(),
            CompressorModel::Conae(m) => m.output_dim(),
        }
    }

    /// Compress one vector. PCA ignores the side (one unsupervised
    /// transform serves both).
    pub fn compress(&self, x: &[f64], side: Side) -> Result<Vec<f64>> {
        match self {
            CompressorModel::Pca(m) => m.project(x),
            CompressorModel::Ce(m) => m.encode(x, side),
            CompressorModel::Conae(m) => m.encode(x, side),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        let kind: u8 = match self {
            CompressorModel::Pca(_) => 0,
            CompressorModel::Ce(_) => 1,
            CompressorModel::Conae(m) if !m.has_two_decoders() => 2,
            CompressorModel::Conae(_) => 3,
        };
        w.write_all(&[kind])?;
        w.write_all(&(self.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.output_dim() as u32).to_le_bytes())?;
        match self {
            CompressorModel::Pca(m) => {
                write_values(&mut w, &m.mean)?;
                write_values(&mut w, m.components.data())?;
            }
            CompressorModel::Ce(m) => {
                write_values(&mut w, m.w_query.data())?;
                write_values(&mut w, m.w_doc.data())?;
            }
            CompressorModel::Conae(m) => {
                write_values(&mut w, m.enc_query.data())?;
                write_values(&mut w, m.enc_doc.data())?;
                write_values(&mut w, m.dec.data())?;
                if let Some(dd) = &m.dec_doc {
                    write_values(&mut w, dd.data())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("bad magic: not a model file"));
        }
        let version = read_u32(&mut r, "version")?;
        if version != MODEL_VERSION {
            return Err(Error::format(format!("unsupported model version {version}")));
        }
        let mut kind = [0u8; 1];
        read_exact(&mut r, &mut kind, "kind")?;
        let k = read_u32(&mut r, "input dim")? as usize;
        let l = read_u32(&mut r, "output dim")? as usize;
        if k == 0 || l == 0 {
            return Err(Error::format("model dims must be positive"));
        }
        let model = match kind[0] {
            0 => CompressorModel::Pca(PcaModel {
                mean: read_values(&mut r, k, "pca mean")?,
                components: read_matrix(&mut r, l, k, "pca components")?,
            }),
            1 => CompressorModel::Ce(CeModel {
                w_query: read_matrix(&mut r, l, k, "ce w_query")?,
                w_doc: read_matrix(&mut r, l, k, "ce w_doc")?,
            }),
            2 | 3 => CompressorModel::Conae(ConaeModel {
                enc_query: read_matrix(&mut r, l, k, "enc_query")?,
                enc_doc: read_matrix(&mut r, l, k, "enc_doc")?,
                dec: read_matrix(&mut r, k, l, "dec")?,
                dec_doc: if kind[0] == 3 {
                    Some(read_matrix(&mut r, k, l, "dec_doc")?)
                } else {
                    None
                },
            }),
            other => {
                return Err(Error::format(format!("unknown model kind {other}")));
            }
        };
        Ok(model)
    }
}

/// Apply a compressor to every row, keeping ids. A zero-row store maps to
/// a zero-row store of the compressed dimension.
pub fn compress_store(
    model: &CompressorModel,
    store: &EmbeddingStore,
    side: Side,
) -> Result<EmbeddingStore> {
    if store.dimension() != model.input_dim() {
        return Err(Error::dimension(
            "compress input",
            model.input_dim(),
            store.dimension(),
        ));
    }
    let l = model.output_dim();
    let mut data = vec![0.0; store.len() * l];
    for i in 0..store.len() {
        let code = model.compress(store.row(i), side)?;
        data[i * l..(i + 1) * l].copy_from_slice(&code);
    }
    EmbeddingStore::new(
        store.ids().to_vec(),
        DenseMatrix::from_vec(store.len(), l, data)?,
    )
}

fn write_values(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_values(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes, what)?;
    let mut out = Vec::with_capacity(n);
    for chunk in bytes.chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(format!("non-finite value in {what}")));
        }
        out.push(v);
    }
    Ok(out)
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize, what: &str) -> Result<DenseMatrix> {
    DenseMatrix::from_vec(rows, cols, read_values(r, rows * cols, what)?)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("truncated model file while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot_unchecked, fill_gaussian, seeded_rng};
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = seeded_rng(seed);
        let mut data = vec![0.0; rows * cols];
        fill_gaussian(&mut rng, &mut data);
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_encoder_is_identity() {
        let model = CeModel {
            w_query: DenseMatrix::identity(4),
            w_doc: DenseMatrix::identity(4),
        };
        let x = [1.0, -2.0, 3.5, 0.25];
        assert_eq!(model.encode(&x, Side::Query).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_encoder_gives_zero() {
        let model = CeModel {
            w_query: DenseMatrix::zeros(2, 4),
            w_doc: DenseMatrix::zeros(2, 4),
        };
        assert_eq!(
            model.encode(&[1.0, 2.0, 3.0, 4.0], Side::Document).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn encode_matches_mat_vec() {
        let w = random_matrix(3, 5, 1);
        let model = ConaeModel {
            enc_query: w.clone(),
            enc_doc: random_matrix(3, 5, 2),
            dec: random_matrix(5, 3, 3),
            dec_doc: None,
        };
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.3 - 1.0).collect();
        assert_eq!(
            model.encode(&x, Side::Query).unwrap(),
            w.mat_vec(&x).unwrap()
        );
    }

    #[test]
    fn sides_use_their_own_weights() {
        let model = ConaeModel {
            enc_query: random_matrix(3, 5, 4),
            enc_doc: random_matrix(3, 5, 5),
            dec: random_matrix(5, 3, 6),
            dec_doc: None,
        };
        let x = vec![1.0; 5];
        assert_ne!(
            model.encode(&x, Side::Query).unwrap(),
            model.encode(&x, Side::Document).unwrap()
        );
    }

    #[test]
    fn decode_matches_mat_vec_and_zero() {
        let dec = random_matrix(6, 3, 7);
        let model = ConaeModel {
            enc_query: random_matrix(3, 6, 8),
            enc_doc: random_matrix(3, 6, 9),
            dec: dec.clone(),
            dec_doc: None,
        };
        let code = [0.5, -1.0, 2.0];
        assert_eq!(model.decode(&code).unwrap(), dec.mat_vec(&code).unwrap());
        let zero = ConaeModel {
            dec: DenseMatrix::zeros(6, 3),
            ..model
        };
        assert_eq!(zero.decode(&code).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn orthonormal_square_round_trips() {
        let basis = random_orthonormal(5, 5, 11).unwrap();
        let model = ConaeModel {
            enc_query: basis.transpose(),
            enc_doc: basis.transpose(),
            dec: basis,
            dec_doc: None,
        };
        let x: Vec<f64> = (0..5).map(|i| (i as f64).sin()).collect();
        let back = model
            .decode(&model.encode(&x, Side::Query).unwrap())
            .unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn init_is_an_orthonormal_projection() {
        let model = init_conae(16, 4, 42, false).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let d = dot_unchecked(model.enc_query.row(i), model.enc_query.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-8);
            }
        }
        assert_eq!(model.dec, model.enc_query.transpose());
        assert_eq!(model.enc_doc, model.enc_query);

        let mut rng = seeded_rng(1);
        let mut x = vec![0.0; 16];
        fill_gaussian(&mut rng, &mut x);
        let code = model.encode(&x, Side::Query).unwrap();
        let norm_in = dot_unchecked(&x, &x).sqrt();
        let norm_out = dot_unchecked(&code, &code).sqrt();
        assert!(norm_out <= norm_in + 1e-9);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_ce(12, 3, 7).unwrap();
        let b = init_ce(12, 3, 7).unwrap();
        assert_eq!(a, b);
        let c = init_ce(12, 3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_expansion() {
        assert!(matches!(init_ce(4, 5, 0), Err(Error::Dimension { .. })));
        assert!(matches!(
            init_conae(4, 5, 0, false),
            Err(Error::Dimension { .. })
        ));
    }

    fn sample_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
        let ids = (0..n).map(|i| format!("d{i}")).collect();
        EmbeddingStore::new(ids, random_matrix(n, dim, seed)).unwrap()
    }

    #[test]
    fn compress_store_is_rowwise() {
        let model = CompressorModel::Conae(init_conae(8, 3, 1, false).unwrap());
        let store = sample_store(10, 8, 2);
        let out = compress_store(&model, &store, Side::Document).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out.dimension(), 3);
        assert_eq!(out.ids(), store.ids());
        for i in 0..10 {
            let want = model.compress(store.row(i), Side::Document).unwrap();
            assert_eq!(out.row(i), want.as_slice());
        }
    }

    #[test]
    fn compress_identity_preserves_matrix() {
        let model = CompressorModel::Ce(CeModel {
            w_query: DenseMatrix::identity(6),
            w_doc: DenseMatrix::identity(6),
        });
        let store = sample_store(5, 6, 3);
        let out = compress_store(&model, &store, Side::Query).unwrap();
        assert_eq!(out.matrix(), store.matrix());
    }

    #[test]
    fn compress_empty_store() {
        let model = CompressorModel::Ce(init_ce(6, 2, 0).unwrap());
        let store =
            EmbeddingStore::new(vec![], DenseMatrix::zeros(0, 6)).unwrap();
        let out = compress_store(&model, &store, Side::Query).unwrap();
        assert_eq!(out.len(), 0);
        assert_eq!(out.dimension(), 2);
    }

    #[test]
    fn compress_dimension_mismatch() {
        let model = CompressorModel::Ce(init_ce(6, 2, 0).unwrap());
        let store = sample_store(3, 5, 1);
        assert!(compress_store(&model, &store, Side::Query).is_err());
    }

    #[test]
    fn model_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let models = [
            CompressorModel::Pca(PcaModel {
                mean: (0..6).map(|i| i as f64 * 0.1).collect(),
                components: random_matrix(2, 6, 21),
            }),
            CompressorModel::Ce(CeModel {
                w_query: random_matrix(2, 6, 22),
                w_doc: random_matrix(2, 6, 23),
            }),
            CompressorModel::Conae(ConaeModel {
                enc_query: random_matrix(2, 6, 24),
                enc_doc: random_matrix(2, 6, 25),
                dec: random_matrix(6, 2, 26),
                dec_doc: None,
            }),
            CompressorModel::Conae(ConaeModel {
                enc_query: random_matrix(2, 6, 27),
                enc_doc: random_matrix(2, 6, 28),
                dec: random_matrix(6, 2, 29),
                dec_doc: Some(random_matrix(6, 2, 30)),
            }),
        ];
        for (i, model) in models.iter().enumerate() {
            let path = dir.path().join(format!("m{i}.model"));
            model.save(&path).unwrap();
            let loaded = CompressorModel::load(&path).unwrap();
            assert_eq!(&loaded, model);
        }
    }

    #[test]
    fn corrupt_model_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.model");
        std::fs::write(&path, b"NOTMODEL").unwrap();
        assert!(CompressorModel::load(&path).is_err());

        let good = dir.path().join("good.model");
        CompressorModel::Ce(init_ce(4, 2, 0).unwrap())
            .save(&good)
            .unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&good, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            CompressorModel::load(&good),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        // No bias term anywhere, so encoding is exactly homogeneous.
        #[test]
        fn encode_is_homogeneous(a in -10.0f64..10.0) {
            let model = init_conae(8, 3, 5, false).unwrap();
            let mut rng = seeded_rng(6);
            let mut x = vec![0.0; 8];
            fill_gaussian(&mut rng, &mut x);
            let scaled: Vec<f64> = x.iter().map(|v| v * a).collect();
            let lhs = model.encode(&scaled, Side::Document).unwrap();
            let rhs = model.encode(&x, Side::Document).unwrap();
            for (l, r) in lhs.iter().zip(rhs) {
                prop_assert!((l - r * a).abs() < 1e-9);
            }
        }
    }
}

//! Fixtures and from-scratch oracles shared by the integration tests.
//!
//! The oracles use the `image` crate and plain arithmetic directly. They do
//! not call into the library under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::http::{header, StatusCode, Uri};
use axum::response::IntoResponse;
use axum::Router;
use image::{DynamicImage, ImageFormat, Rgb, RgbImage};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use histoseek_core::repository::ImageEntry;
use histoseek_core::{signature_of_bytes, Repository};
use url::Url;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn encode(img: &DynamicImage, format: ImageFormat) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    match format {
        ImageFormat::Jpeg => DynamicImage::ImageRgb8(img.to_rgb8()).write_to(&mut out, format),
        ImageFormat::Gif => {
            let mut enc = image::codecs::gif::GifEncoder::new_with_speed(&mut out, 30);
            enc.encode_frame(image::Frame::new(img.to_rgba8())).map(|_| ())
        }
        _ => img.write_to(&mut out, format),
    }
    .expect("in-memory encode");
    out.into_inner()
}

pub fn png(img: &RgbImage) -> Vec<u8> {
    encode(&DynamicImage::ImageRgb8(img.clone()), ImageFormat::Png)
}

/// A random opaque colour image drawn from one of three families with
/// quite different gray-level distributions: smooth gradients, a few flat
/// blocks, and noise around a random mean.
pub fn random_image(rng: &mut StdRng, w: u32, h: u32) -> RgbImage {
    match rng.random_range(0..3) {
        0 => {
            let a: [f64; 3] = [rng.random(), rng.random(), rng.random()].map(|v: f64| v * 255.0);
            let b: [f64; 3] = [rng.random(), rng.random(), rng.random()].map(|v: f64| v * 255.0);
            let (dx, dy): (f64, f64) = (rng.random(), rng.random());
            let norm = (dx * f64::from(w) + dy * f64::from(h)).max(1.0);
            RgbImage::from_fn(w, h, |x, y| {
                let t = (dx * f64::from(x) + dy * f64::from(y)) / norm;
                Rgb([0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * t).round() as u8))
            })
        }
        1 => {
            let palette: Vec<[u8; 3]> = (0..rng.random_range(2..6)).map(|_| rng.random()).collect();
            let cell = rng.random_range(1..=8u32);
            let cells: Vec<usize> = (0..64 * 64).map(|_| rng.random_range(0..palette.len())).collect();
            RgbImage::from_fn(w, h, |x, y| {
                let (cx, cy) = ((x / cell) % 64, (y / cell) % 64);
                Rgb(palette[cells[(cy * 64 + cx) as usize]])
            })
        }
        _ => {
            let mean = rng.random_range(30.0..225.0);
            let spread = rng.random_range(5.0..60.0);
            let tint: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-20.0..20.0));
            let px = |c: usize, rng: &mut StdRng| {
                (mean + tint[c] + rng.random_range(-spread..=spread)).clamp(0.0, 255.0) as u8
            };
            let mut img = RgbImage::new(w, h);
            for p in img.pixels_mut() {
                *p = Rgb([px(0, rng), px(1, rng), px(2, rng)]);
            }
            img
        }
    }
}

/// Nearest-neighbour `k`× enlargement.
pub fn replicate(img: &RgbImage, k: u32) -> RgbImage {
    RgbImage::from_fn(img.width() * k, img.height() * k, |x, y| *img.get_pixel(x / k, y / k))
}

/// Gray levels the way the definition reads: BT.601 weights on opaque
/// pixels, rounded half up.
pub fn oracle_gray(bytes: &[u8]) -> Vec<u8> {
    let img = image::load_from_memory(bytes).expect("oracle decode").to_rgba8();
    img.pixels()
        .map(|p| {
            assert_eq!(p[3], 255, "oracle only handles opaque images");
            let y = 299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]);
            ((y + 500) / 1000) as u8
        })
        .collect()
}

pub fn oracle_signature(bytes: &[u8]) -> Vec<f64> {
    let gray = oracle_gray(bytes);
    let mut counts = [0usize; 256];
    for g in &gray {
        counts[usize::from(*g)] += 1;
    }
    counts.iter().map(|&c| 100.0 * c as f64 / gray.len() as f64).collect()
}

pub fn oracle_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn oracle_intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

pub struct CorpusItem {
    pub entry: ImageEntry,
    pub bytes: Vec<u8>,
}

/// 100 entries of domain `cricket`. The last ten reuse the images of the
/// first ten on other pages, so ties in similarity actually occur.
pub fn corpus(seed: u64) -> Vec<CorpusItem> {
    let mut rng = rng(seed);
    let mut images: Vec<Vec<u8>> = Vec::new();
    let mut items = Vec::new();
    for i in 0..100 {
        let bytes = if i < 90 {
            let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
            let b = png(&random_image(&mut rng, w, h));
            images.push(b.clone());
            b
        } else {
            images[i - 90].clone()
        };
        let img_idx = if i < 90 { i } else { i - 90 };
        let relevance = (rng.random_range(4.05..9.95) * 100.0f64).round() / 100.0;
        let entry = ImageEntry::new(
            Url::parse(&format!("http://corpus.test/img/{img_idx}.png")).unwrap(),
            Url::parse(&format!("http://corpus.test/page/{i}.html")).unwrap(),
            "cricket",
            relevance,
            signature_of_bytes(&bytes).expect("corpus image signs"),
        );
        items.push(CorpusItem { entry, bytes });
    }
    items
}

pub fn fill(repo: &Repository, corpus: &[CorpusItem]) {
    for item in corpus {
        repo.insert(item.entry.clone()).unwrap();
    }
}

/// 20 query images: upscaled copies of corpus images (which match
/// exactly) interleaved with fresh images.
pub fn queries(seed: u64, corpus: &[CorpusItem]) -> Vec<Vec<u8>> {
    let mut rng = rng(seed);
    (0..20)
        .map(|q| {
            if q % 2 == 0 {
                let src = image::load_from_memory(&corpus[rng.random_range(0..90)].bytes)
                    .unwrap()
                    .to_rgb8();
                png(&replicate(&src, 2))
            } else {
                let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
                png(&random_image(&mut rng, w, h))
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OracleQuery {
    pub exact: bool,
    pub tolerance: u8,
    pub range: Option<(f64, f64)>,
}

/// Ids of the expected results, best first.
pub fn oracle_search(q: &OracleQuery, query_bytes: &[u8], corpus: &[CorpusItem]) -> Vec<String> {
    let qs = oracle_signature(query_bytes);
    let (lo, hi) = q.range.unwrap_or_else(|| {
        let rels = corpus.iter().map(|c| c.entry.relevance);
        let lo = rels.clone().fold(f64::INFINITY, f64::min).floor();
        let hi = rels.fold(f64::NEG_INFINITY, f64::max).ceil();
        (lo, hi)
    });
    // Last write per id wins, as in the store.
    let mut by_id: BTreeMap<&str, &CorpusItem> = BTreeMap::new();
    for c in corpus {
        by_id.insert(&c.entry.id, c);
    }
    let mut hits: Vec<(f64, &CorpusItem)> = by_id
        .values()
        .filter(|c| c.entry.relevance >= lo && c.entry.relevance <= hi)
        .filter_map(|c| {
            let rs = oracle_signature(&c.bytes);
            let exact = oracle_gap(&qs, &rs) <= 0.01;
            let sim = oracle_intersection(&qs, &rs);
            let keep = exact || (!q.exact && sim >= 100.0 - f64::from(q.tolerance));
            keep.then_some((sim, *c))
        })
        .collect();
    hits.sort_by(|(sa, a), (sb, b)| {
        sb.partial_cmp(sa)
            .unwrap()
            .then(b.entry.relevance.partial_cmp(&a.entry.relevance).unwrap())
            .then_with(|| a.entry.image_url.as_str().cmp(b.entry.image_url.as_str()))
            .then_with(|| a.entry.page_url.as_str().cmp(b.entry.page_url.as_str()))
            .then_with(|| a.entry.id.cmp(&b.entry.id))
    });
    hits.into_iter().map(|(_, c)| c.entry.id.clone()).collect()
}

/// Weights and synonyms of the cricket profile used by the crawl tests.
pub const CRICKET_PROFILE: &str = r#"{
  "name": "cricket",
  "relevance_limit": 4.0,
  "terms": [
    { "term": "cricket", "weight": 0.9 },
    { "term": "wicket keeper", "weight": 0.8 },
    { "term": "umpire", "weight": 0.4, "synonyms": ["judge", "moderator", "referee"] },
    { "term": "bat", "weight": 0.2 },
    { "term": "match", "weight": 0.1, "synonyms": ["competition", "contest"] }
  ]
}"#;

pub const CRICKET_WEIGHTS: [(&str, f64); 5] = [
    ("cricket", 0.9),
    ("wicket keeper", 0.8),
    ("umpire", 0.4),
    ("bat", 0.2),
    ("match", 0.1),
];

/// Term counts of one fixture page, in `CRICKET_WEIGHTS` order.
#[derive(Debug, Clone, Copy)]
pub struct FixturePage {
    pub counts: [u64; 5],
}

/// Twenty pages with hand-picked counts. Pages 5 and 6 sit exactly on the
/// limit of 4.0 (9·0.4 + 4·0.1 and 4·0.9 + 1·0.4) and must not pass it.
pub const SITE: [FixturePage; 20] = [
    FixturePage {
        counts: [6, 1, 2, 3, 4],
    },
    FixturePage {
        counts: [0, 0, 0, 0, 0],
    },
    FixturePage {
        counts: [1, 0, 1, 0, 1],
    },
    FixturePage {
        counts: [5, 0, 0, 0, 0],
    },
    FixturePage {
        counts: [4, 0, 0, 0, 0],
    },
    FixturePage {
        counts: [0, 0, 9, 0, 4],
    },
    FixturePage {
        counts: [4, 0, 1, 0, 0],
    },
    FixturePage {
        counts: [2, 3, 0, 1, 0],
    },
    FixturePage {
        counts: [0, 5, 0, 0, 2],
    },
    FixturePage {
        counts: [0, 0, 0, 20, 0],
    },
    FixturePage {
        counts: [0, 0, 0, 21, 0],
    },
    FixturePage {
        counts: [3, 1, 1, 1, 1],
    },
    FixturePage {
        counts: [0, 0, 0, 0, 41],
    },
    FixturePage {
        counts: [10, 2, 0, 0, 0],
    },
    FixturePage {
        counts: [1, 1, 1, 1, 1],
    },
    FixturePage {
        counts: [2, 2, 2, 2, 2],
    },
    FixturePage {
        counts: [7, 0, 0, 0, 0],
    },
    FixturePage {
        counts: [0, 0, 3, 0, 30],
    },
    FixturePage {
        counts: [4, 0, 0, 1, 3],
    },
    FixturePage {
        counts: [3, 2, 0, 0, 0],
    },
];

pub fn expected_relevance(page: &FixturePage) -> f64 {
    page.counts
        .iter()
        .zip(CRICKET_WEIGHTS)
        .map(|(&c, (_, w))| c as f64 * w)
        .sum()
}

/// Body text with each term written `count` times, cycling through
/// spellings and synonyms, padded with neutral words.
fn page_body(page: &FixturePage) -> String {
    let spellings: [&[&str]; 5] = [
        &["cricket", "Cricket", "CRICKET"],
        &["wicket keeper", "Wicket  Keeper", "wicket-keeper"],
        &["umpire", "judge", "Moderator", "referee"],
        &["bat", "Bat"],
        &["match", "competition", "Contest"],
    ];
    let mut words = vec!["<p>Welcome to the ground.</p>".to_string()];
    for (t, &n) in page.counts.iter().enumerate() {
        for i in 0..n as usize {
            let s = spellings[t][i % spellings[t].len()];
            words.push(format!("<span>{s}</span>, the weather holds;"));
        }
    }
    words.join("\n")
}

/// Serves the 20 pages plus their images. Page `i` links to page `i+1`
/// and shows `/img/i.png` and the shared `/img/shared.png`.
pub fn site_files() -> HashMap<String, (&'static str, Vec<u8>)> {
    let mut files = HashMap::new();
    let mut r = rng(77);
    for (i, page) in SITE.iter().enumerate() {
        let next = if i + 1 < SITE.len() {
            format!(r#"<a href="/p{}.html#top">next</a>"#, i + 1)
        } else {
            String::new()
        };
        let html = format!(
            "<!doctype html><html><head><title>Page {i}</title>\
             <script>var cricket = 'cricket cricket';</script></head>\
             <body>{}\n{next}\n<img src=\"/img/{i}.png\"><img src=\"img/shared.png\"></body></html>",
            page_body(page)
        );
        files.insert(format!("/p{i}.html"), ("text/html; charset=utf-8", html.into_bytes()));
        files.insert(
            format!("/img/{i}.png"),
            ("image/png", png(&random_image(&mut r, 24, 24))),
        );
    }
    files.insert(
        "/img/shared.png".into(),
        ("image/png", png(&random_image(&mut r, 16, 16))),
    );
    files
}

pub async fn serve_site(files: HashMap<String, (&'static str, Vec<u8>)>) -> SocketAddr {
    let files = Arc::new(files);
    let app = Router::new().fallback(move |uri: Uri| {
        let files = files.clone();
        async move {
            match files.get(uri.path()) {
                Some((ct, body)) => ([(header::CONTENT_TYPE, *ct)], body.clone()).into_response(),
                None => StatusCode::NOT_FOUND.into_response(),
            }
        }
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

//! Seeded synthetic benchmark suites over a generated mock web.
//!
//! Each category has its own page template. Hijackments are assigned round
//! robin over the suite (none, barrier, popup, dynamic shift) and always sit
//! on the page holding the answer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::graph::{Effect, Hijackment, HijackmentKind, MockNode, MockPage, MockSiteGraph};
use crate::task::{
    Category, EvalMethod, Evaluation, OracleAction, OracleScript, SuiteManifest, Subset,
    TaskConfig,
};

/// Answer the oracle gives when the evidence never became visible.
pub const NOT_FOUND_ANSWER: &str = "NOT FOUND";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub manifest: SuiteManifest,
    pub graph: MockSiteGraph,
    /// Task id -> hijackment guarding its answer page.
    pub hijacks: BTreeMap<String, HijackmentKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HijackPlan {
    None,
    Barrier,
    Popup,
    Dynamic,
}

const PLANS: [HijackPlan; 4] = [
    HijackPlan::None,
    HijackPlan::Barrier,
    HijackPlan::Popup,
    HijackPlan::Dynamic,
];

const ENGINES: [&str; 3] = ["bing", "duckduckgo", "google"];

const ADJECTIVES: [&str; 12] = [
    "Aurora", "Cobalt", "Summit", "Harbor", "Velvet", "Granite", "Lumen", "Cedar", "Nimbus",
    "Saffron", "Meridian", "Orchid",
];
const NOUNS: [&str; 12] = [
    "Power Bank", "Desk Lamp", "Kettle", "Headphones", "Backpack", "Smart Watch", "Blender",
    "Drone", "Air Purifier", "Camera", "Scooter", "Speaker",
];
const SURNAMES: [&str; 12] = [
    "Hale", "Okafor", "Lindqvist", "Moreau", "Tanaka", "Ribeiro", "Novak", "Castell", "Iyer",
    "Brandt", "Quinn", "Sato",
];
const FIRMS: [&str; 6] = ["Trading", "Holdings", "Supply", "Imports", "Logistics", "Retail"];
const RISKS: [&str; 8] = [
    "Contains lithium battery",
    "Age-restricted item",
    "High counterfeit risk",
    "Requires import license",
    "Flammable materials",
    "Recalled model",
    "Restricted in EU markets",
    "Magnetic components",
];
const PORTS: [&str; 10] = [
    "Rotterdam", "Singapore", "Shanghai", "Hamburg", "Los Angeles", "Antwerp", "Busan",
    "Jebel Ali", "Felixstowe", "Santos",
];
const DECL_TYPES: [&str; 3] = ["Import", "Export", "Transit"];
const CLEARANCE: [&str; 4] = [
    "Released",
    "Held for inspection",
    "Pending documents",
    "Duty payment required",
];
const PROVIDERS: [&str; 8] = [
    "StripeLink", "PayHarbor", "SecureCheckout Pro", "NovaPay", "TrustGate", "QuickRemit",
    "OpenLedger Pay", "MintPay",
];
const CONSENT: [&str; 3] = ["Accept all cookies", "I agree", "Allow and continue"];

fn code(rng: &mut ChaCha8Rng, prefix: &str, digits: u32) -> String {
    let n: u64 = rng.gen_range(10u64.pow(digits - 1)..10u64.pow(digits));
    format!("{prefix}{n}")
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

fn product(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", pick(rng, &ADJECTIVES), pick(rng, &NOUNS))
}

fn company(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", pick(rng, &SURNAMES), pick(rng, &FIRMS))
}

/// Everything one template contributes.
struct Built {
    role: String,
    instruction: String,
    sop: Vec<String>,
    output_format: String,
    label: String,
    evidence: String,
    entry_url: String,
    pages: Vec<(String, MockPage)>,
    /// Turns that bring the agent onto the detail page.
    pre: OracleScript,
    /// Turns between escaping the hijackment and answering.
    post: OracleScript,
}

fn click(text: &str) -> OracleAction {
    OracleAction::ClickText { text: text.into() }
}

fn search_form(
    title: &str,
    placeholder: &str,
    button: &str,
    routes: BTreeMap<String, String>,
    fallback: &str,
) -> Vec<MockNode> {
    let submit = Effect::Submit {
        field: "q".into(),
        routes,
        fallback: fallback.into(),
    };
    vec![
        MockNode::new("h1").text(title),
        MockNode::new("form")
            .child(
                MockNode::new("input")
                    .interactive()
                    .id("q")
                    .attr("type", "text")
                    .attr("placeholder", placeholder)
                    .on_enter(submit.clone()),
            )
            .child(MockNode::new("button").text(button).interactive().on_click(submit)),
    ]
}

fn no_results(back: &str) -> MockPage {
    MockPage::new(
        "No results",
        vec![
            MockNode::paragraph("No records match your search."),
            MockNode::link("Back to search", back),
        ],
    )
}

fn footer(home: &str) -> MockNode {
    MockNode::new("footer")
        .child(MockNode::link("Home", home))
        .child(MockNode::paragraph("Terms of service | Privacy policy"))
}

fn build_prp(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let target = product(rng);
    let label = pick(rng, &RISKS).to_string();
    let mut decoy = product(rng);
    while decoy == target {
        decoy = product(rng);
    }
    let decoy_risk = RISKS.iter().find(|r| **r != label).expect("pool > 1");
    let decoy_url = format!("{base}products/{}", code(rng, "d", 5));
    let none = format!("{base}search/none");
    let evidence = format!("Risk attribute: {label}");
    let mut routes = BTreeMap::new();
    routes.insert(target.clone(), arrive.to_string());
    routes.insert(decoy.clone(), decoy_url.clone());
    let mut entry = search_form("Marketplace", "Search products", "Search", routes, &none);
    entry.push(MockNode::new("h2").text("Featured"));
    entry.push(MockNode::link(decoy.clone(), decoy_url.clone()));
    entry.push(footer(base));
    let price = rng.gen_range(12..480);
    let pages = vec![
        (base.to_string(), MockPage::new("Marketplace", entry)),
        (
            detail.to_string(),
            MockPage::new(
                target.clone(),
                vec![
                    MockNode::new("h1").text(target.clone()),
                    MockNode::paragraph(format!("Price: ${price}")),
                    MockNode::paragraph(format!("Seller: {}", company(rng))),
                    MockNode::new("section")
                        .gated()
                        .child(MockNode::new("h2").text("Compliance"))
                        .child(MockNode::paragraph(evidence.clone())),
                    footer(base),
                ],
            ),
        ),
        (
            decoy_url,
            MockPage::new(
                decoy.clone(),
                vec![
                    MockNode::new("h1").text(decoy),
                    MockNode::paragraph(format!("Risk attribute: {decoy_risk}")),
                    footer(base),
                ],
            ),
        ),
        (none, no_results(base)),
    ];
    Built {
        role: "Product risk analyst".into(),
        instruction: format!(
            "Find the risk attribute listed on the marketplace page of the product \"{target}\"."
        ),
        sop: vec![
            format!("Open {base}"),
            format!("Search for \"{target}\""),
            "Open the product page and read its compliance section".into(),
            "Report the risk attribute".into(),
        ],
        output_format: "The risk attribute text exactly as shown".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![
            OracleAction::InputInto {
                placeholder: "Search products".into(),
                text: target,
            },
            click("Search"),
        ]],
        post: Vec::new(),
    }
}

fn build_mrp(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let mut names: Vec<String> = Vec::new();
    while names.len() < 4 {
        let c = company(rng);
        if !names.contains(&c) {
            names.push(c);
        }
    }
    let target = names[0].clone();
    let label = code(rng, "BL-", 8);
    let evidence = format!("Business license number: {label}");
    let mut listing = names.clone();
    listing.shuffle(rng);
    let mut entry = vec![
        MockNode::new("h1").text("Merchant Directory"),
        MockNode::paragraph("Registered merchants in this region"),
    ];
    let mut pages = Vec::new();
    let mut list = MockNode::new("ul");
    for name in &listing {
        let url = if *name == target {
            arrive.to_string()
        } else {
            let u = format!("{base}merchants/{}", code(rng, "x", 5));
            pages.push((
                u.clone(),
                MockPage::new(
                    name.clone(),
                    vec![
                        MockNode::new("h1").text(name.clone()),
                        MockNode::paragraph(format!(
                            "Business license number: {}",
                            code(rng, "BL-", 8)
                        )),
                        footer(base),
                    ],
                ),
            ));
            u
        };
        list = list.child(MockNode::new("li").child(MockNode::link(name.clone(), url)));
    }
    entry.push(list);
    entry.push(footer(base));
    pages.push((base.to_string(), MockPage::new("Merchant Directory", entry)));
    pages.push((
        detail.to_string(),
        MockPage::new(
            target.clone(),
            vec![
                MockNode::new("h1").text(target.clone()),
                MockNode::paragraph(format!("Registered address: {} Commerce Road", rng.gen_range(1..400))),
                MockNode::new("div").gated().child(MockNode::paragraph(evidence.clone())),
                footer(base),
            ],
        ),
    ));
    Built {
        role: "Merchant onboarding reviewer".into(),
        instruction: format!("Find the business license number of the merchant \"{target}\"."),
        sop: vec![
            format!("Open {base}"),
            format!("Open the directory entry for \"{target}\""),
            "Report the business license number".into(),
        ],
        output_format: "The license number only, e.g. BL-00000000".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![click(&target)]],
        post: Vec::new(),
    }
}

fn build_crp(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let target = format!("{} {}", pick(rng, &ADJECTIVES), pick(rng, &SURNAMES));
    let label = code(rng, "CID-", 6);
    let none = format!("{base}clients/none");
    let evidence = format!("Registered identifier: {label}");
    let mut routes = BTreeMap::new();
    routes.insert(target.clone(), arrive.to_string());
    let mut entry = search_form("Client Registry", "Search client name", "Look up", routes, &none);
    entry.push(footer(base));
    let pages = vec![
        (base.to_string(), MockPage::new("Client Registry", entry)),
        (
            detail.to_string(),
            MockPage::new(
                target.clone(),
                vec![
                    MockNode::new("h1").text(target.clone()),
                    MockNode::paragraph(format!("Client since {}", rng.gen_range(2001..2024))),
                    MockNode::new("div").gated().child(MockNode::paragraph(evidence.clone())),
                    footer(base),
                ],
            ),
        ),
        (none, no_results(base)),
    ];
    Built {
        role: "Client due-diligence analyst".into(),
        instruction: format!("Find the registered identifier of the client \"{target}\"."),
        sop: vec![
            format!("Open {base}"),
            format!("Look up \"{target}\""),
            "Report the registered identifier".into(),
        ],
        output_format: "The identifier only, e.g. CID-000000".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![
            OracleAction::InputInto {
                placeholder: "Search client name".into(),
                text: target,
            },
            click("Look up"),
        ]],
        post: Vec::new(),
    }
}

fn build_lsct(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let tracking = code(rng, "TRK", 9);
    let origin = pick(rng, &PORTS).to_string();
    let label = PORTS
        .iter()
        .filter(|p| **p != origin)
        .copied()
        .collect::<Vec<_>>()
        .choose(rng)
        .expect("ports")
        .to_string();
    let none = format!("{base}shipments/none");
    let evidence = format!("Destination port: {label}");
    let mut routes = BTreeMap::new();
    routes.insert(tracking.clone(), arrive.to_string());
    let mut entry = search_form("Cargo Tracking", "Tracking number", "Track", routes, &none);
    entry.push(footer(base));
    let pages = vec![
        (base.to_string(), MockPage::new("Cargo Tracking", entry)),
        (
            detail.to_string(),
            MockPage::new(
                format!("Shipment {tracking}"),
                vec![
                    MockNode::new("h1").text(format!("Shipment {tracking}")),
                    MockNode::paragraph(format!("Origin port: {origin}")),
                    MockNode::new("table")
                        .gated()
                        .child(MockNode::paragraph(evidence.clone()))
                        .child(MockNode::paragraph("Status: In transit")),
                    footer(base),
                ],
            ),
        ),
        (none, no_results(base)),
    ];
    Built {
        role: "Logistics compliance officer".into(),
        instruction: format!("Find the destination port of the shipment with tracking number {tracking}."),
        sop: vec![
            format!("Open {base}"),
            format!("Track {tracking}"),
            "Report the destination port".into(),
        ],
        output_format: "The port name only".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![
            OracleAction::InputInto {
                placeholder: "Tracking number".into(),
                text: tracking,
            },
            click("Track"),
        ]],
        post: Vec::new(),
    }
}

fn build_cdcsa(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let number = code(rng, "CD", 10);
    let kind = pick(rng, &DECL_TYPES).to_string();
    let label = pick(rng, &CLEARANCE).to_string();
    let none = format!("{base}declarations/none");
    let evidence = format!("Clearance status: {label}");
    let mut routes = BTreeMap::new();
    routes.insert(number.clone(), arrive.to_string());
    let submit = Effect::Submit {
        field: "decl".into(),
        routes,
        fallback: none.clone(),
    };
    let mut select = MockNode::new("select")
        .interactive()
        .attr("name", "declaration_type")
        .text("Select type");
    select.options = DECL_TYPES.iter().map(|s| s.to_string()).collect();
    let entry = vec![
        MockNode::new("h1").text("Customs Declaration Lookup"),
        MockNode::new("form")
            .child(select)
            .child(
                MockNode::new("input")
                    .interactive()
                    .id("decl")
                    .attr("type", "text")
                    .attr("placeholder", "Declaration number")
                    .on_enter(submit.clone()),
            )
            .child(MockNode::new("button").text("Check status").interactive().on_click(submit)),
        footer(base),
    ];
    let pages = vec![
        (base.to_string(), MockPage::new("Customs Declaration Lookup", entry)),
        (
            detail.to_string(),
            MockPage::new(
                format!("Declaration {number}"),
                vec![
                    MockNode::new("h1").text(format!("Declaration {number}")),
                    MockNode::paragraph(format!("Declaration type: {kind}")),
                    MockNode::new("div").gated().child(MockNode::paragraph(evidence.clone())),
                    footer(base),
                ],
            ),
        ),
        (none, no_results(base)),
    ];
    Built {
        role: "Customs audit specialist".into(),
        instruction: format!(
            "Check the clearance status of the {} declaration {number}.",
            kind.to_lowercase()
        ),
        sop: vec![
            format!("Open {base}"),
            format!("Choose declaration type {kind} and enter {number}"),
            "Report the clearance status".into(),
        ],
        output_format: "The clearance status exactly as shown".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![
            OracleAction::Select {
                name: "declaration_type".into(),
                option: kind,
            },
            OracleAction::InputInto {
                placeholder: "Declaration number".into(),
                text: number,
            },
            click("Check status"),
        ]],
        post: Vec::new(),
    }
}

fn build_waiv(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let target = company(rng);
    let label = code(rng, "ICP-", 8);
    let evidence = format!("ICP filing number: {label}");
    let link_text = format!("{target} official website");
    let decoy = company(rng);
    let decoy_url = format!("{base}sites/{}", code(rng, "z", 5));
    let entry = vec![
        MockNode::new("h1").text("Registry search results"),
        MockNode::link(link_text.clone(), arrive),
        MockNode::link(format!("{decoy} official website"), decoy_url.clone()),
        footer(base),
    ];
    let pages = vec![
        (base.to_string(), MockPage::new("Registry search results", entry)),
        (
            detail.to_string(),
            MockPage::new(
                target.clone(),
                vec![
                    MockNode::new("h1").text(target.clone()),
                    MockNode::paragraph(format!("Welcome to {target}.")),
                    MockNode::new("button")
                        .text("Show registration details")
                        .interactive()
                        .on_click(Effect::Reveal {
                            target: "reg".into(),
                        }),
                    MockNode::new("div")
                        .id("reg")
                        .hidden()
                        .gated()
                        .child(MockNode::paragraph(evidence.clone())),
                ],
            ),
        ),
        (
            decoy_url,
            MockPage::new(
                decoy.clone(),
                vec![
                    MockNode::new("h1").text(decoy),
                    MockNode::paragraph(format!("ICP filing number: {}", code(rng, "ICP-", 8))),
                ],
            ),
        ),
    ];
    Built {
        role: "Website identity verifier".into(),
        instruction: format!("Find the ICP filing number shown on the official website of {target}."),
        sop: vec![
            format!("Open {base}"),
            format!("Open the official website of {target}"),
            "Open the registration details".into(),
            "Report the ICP filing number".into(),
        ],
        output_format: "The filing number only, e.g. ICP-00000000".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![click(&link_text)]],
        post: vec![vec![click("Show registration details")]],
    }
}

fn build_cca(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let item = product(rng);
    let listed: u32 = rng.gen_range(20..900);
    let consistent = rng.gen_bool(0.5);
    let checkout = if consistent {
        listed
    } else {
        listed + rng.gen_range(1..60)
    };
    let label = if consistent { "Consistent" } else { "Inconsistent" }.to_string();
    let evidence = format!("Checkout total: ${checkout}");
    let entry = vec![
        MockNode::new("h1").text(item.clone()),
        MockNode::paragraph(format!("Listed price: ${listed}")),
        MockNode::link("View checkout", arrive),
        footer(base),
    ];
    let pages = vec![
        (base.to_string(), MockPage::new(item.clone(), entry)),
        (
            detail.to_string(),
            MockPage::new(
                "Checkout",
                vec![
                    MockNode::new("h1").text("Checkout"),
                    MockNode::paragraph(format!("Item: {item}")),
                    MockNode::new("div").gated().child(MockNode::paragraph(evidence.clone())),
                    footer(base),
                ],
            ),
        ),
    ];
    Built {
        role: "Content consistency auditor".into(),
        instruction: format!(
            "Check whether the listed price of \"{item}\" matches the checkout total."
        ),
        sop: vec![
            format!("Open {base} and note the listed price"),
            "Open the checkout page and note the total".into(),
            "Compare the two amounts".into(),
        ],
        output_format: "Consistent or Inconsistent".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![click("View checkout")]],
        post: Vec::new(),
    }
}

fn build_spcv(rng: &mut ChaCha8Rng, base: &str, detail: &str, arrive: &str) -> Built {
    let shop = format!("{} Store", pick(rng, &ADJECTIVES));
    let label = pick(rng, &PROVIDERS).to_string();
    let others: Vec<&str> = PROVIDERS.iter().filter(|p| **p != label).copied().collect();
    let shown: Vec<&str> = others.choose_multiple(rng, 2).copied().collect();
    let evidence = format!("Payment processed by {label}");
    let order = code(rng, "ORD-", 7);
    let entry = vec![
        MockNode::new("h1").text(shop.clone()),
        MockNode::paragraph(format!("Order {order}: 1 item")),
        MockNode::paragraph(format!("We also accept: {}", shown.join(", "))),
        MockNode::link("Proceed to payment", arrive),
        footer(base),
    ];
    let pages = vec![
        (base.to_string(), MockPage::new(shop.clone(), entry)),
        (
            detail.to_string(),
            MockPage::new(
                "Payment",
                vec![
                    MockNode::new("h1").text("Payment"),
                    MockNode::paragraph(format!("Order {order}")),
                    MockNode::new("div").gated().child(MockNode::paragraph(evidence.clone())),
                    footer(base),
                ],
            ),
        ),
    ];
    Built {
        role: "Payment channel validator".into(),
        instruction: format!("Identify the payment processor that handles checkout at {shop}."),
        sop: vec![
            format!("Open {base}"),
            "Proceed to payment".into(),
            "Report the payment processor named on the payment page".into(),
        ],
        output_format: "The processor name only".into(),
        label,
        evidence,
        entry_url: base.to_string(),
        pages,
        pre: vec![vec![click("Proceed to payment")]],
        post: Vec::new(),
    }
}

fn site_slug(cat: Category) -> &'static str {
    match cat {
        Category::Prp => "market",
        Category::Mrp => "bizdir",
        Category::Crp => "clients",
        Category::Lsct => "cargo",
        Category::Cdcsa => "customs",
        Category::Waiv => "registry",
        Category::Cca => "store",
        Category::Spcv => "shop",
    }
}

fn detail_path(cat: Category) -> &'static str {
    match cat {
        Category::Prp => "products",
        Category::Mrp => "merchants",
        Category::Crp => "clients",
        Category::Lsct => "shipments",
        Category::Cdcsa => "declarations",
        Category::Waiv => "site",
        Category::Cca => "checkout",
        Category::Spcv => "pay",
    }
}

/// Build a deterministic suite with `per_category` tasks in each category.
pub fn generate_synthetic_suite(seed: u64, per_category: usize) -> SyntheticSuite {
    let per_category = per_category.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = MockSiteGraph::new(seed);
    let mut tasks = Vec::new();
    let mut oracles = BTreeMap::new();
    let mut hijacks = BTreeMap::new();
    let mut index = 0usize;
    for cat in Category::ALL {
        for k in 0..per_category {
            let plan = PLANS[index % PLANS.len()];
            let base = format!("https://{}{}.test/", site_slug(cat), k + 1);
            let detail = format!("{base}{}/{}", detail_path(cat), code(&mut rng, "", 6));
            // Every other dynamic-shift task reaches its page through a redirect.
            let redirect = plan == HijackPlan::Dynamic && (index / PLANS.len()) % 2 == 1;
            let arrive = if redirect {
                format!("{base}go/{}", code(&mut rng, "r", 4))
            } else {
                detail.clone()
            };
            let builder: fn(&mut ChaCha8Rng, &str, &str, &str) -> Built = match cat {
                Category::Prp => build_prp,
                Category::Mrp => build_mrp,
                Category::Crp => build_crp,
                Category::Lsct => build_lsct,
                Category::Cdcsa => build_cdcsa,
                Category::Waiv => build_waiv,
                Category::Cca => build_cca,
                Category::Spcv => build_spcv,
            };
            let built = builder(&mut rng, &base, &detail, &arrive);
            graph.pages.extend(built.pages);
            let mut script = built.pre;
            let hijack = match plan {
                HijackPlan::None => None,
                HijackPlan::Barrier => {
                    let k = rng.gen_range(1..=2u32);
                    for _ in 0..k {
                        script.push(vec![OracleAction::SolveCaptcha]);
                    }
                    Some(HijackmentKind::VerificationBarrier { solve_on_attempt: k })
                }
                HijackPlan::Popup => {
                    let consent = pick(&mut rng, &CONSENT).to_string();
                    script.push(vec![click(&consent)]);
                    Some(HijackmentKind::Popup {
                        consent_text: consent,
                        message: "We use cookies to improve your experience.".into(),
                    })
                }
                HijackPlan::Dynamic => {
                    let latency = rng.gen_range(2..=3u32);
                    if redirect {
                        graph.pages.insert(
                            arrive.clone(),
                            MockPage::new("Redirecting", vec![MockNode::paragraph("Redirecting...")]),
                        );
                        graph.hijackments.push(Hijackment {
                            page: arrive.clone(),
                            kind: HijackmentKind::DynamicShift {
                                latency_ticks: 0,
                                redirect_chain: vec![detail.clone()],
                            },
                        });
                    }
                    script.push(vec![OracleAction::Wait { seconds: latency }]);
                    Some(HijackmentKind::DynamicShift {
                        latency_ticks: latency,
                        redirect_chain: Vec::new(),
                    })
                }
            };
            if let Some(kind) = &hijack {
                graph.hijackments.push(Hijackment {
                    page: detail.clone(),
                    kind: kind.clone(),
                });
            }
            script.extend(built.post);
            script.push(vec![OracleAction::Done {
                answer: built.label.clone(),
                evidence: built.evidence,
            }]);
            let task = TaskConfig {
                id: format!("{}-{:03}", cat.code().to_lowercase(), k + 1),
                category: cat,
                role: built.role,
                instruction: built.instruction,
                sop: Some(built.sop),
                output_format: built.output_format,
                evaluation: Evaluation {
                    method: EvalMethod::Exact,
                    label: built.label,
                },
                entry_url: built.entry_url,
                subset: Subset::Standard,
            };
            // Odd-numbered tasks go to the challenge subset.
            let task = if k % 2 == 1 {
                task.derive_challenge_variant().expect("task has an SOP")
            } else {
                task
            };
            oracles.insert(task.id.clone(), script);
            if let Some(kind) = hijack {
                hijacks.insert(task.id.clone(), kind);
            }
            tasks.push(task);
            index += 1;
        }
    }
    let mut results = vec![MockNode::new("h1").text("Search results")];
    for t in &tasks {
        results.push(MockNode::link(t.entry_url.clone(), t.entry_url.clone()));
    }
    for engine in ENGINES {
        let url = format!("mock://search/{engine}");
        graph.pages.insert(url.clone(), MockPage::new(format!("{engine} results"), results.clone()));
        graph.search_pages.insert(engine.to_string(), url);
    }
    let mut manifest = SuiteManifest::new(format!("synthetic-{seed}-{per_category}"), tasks);
    manifest.oracles = oracles;
    manifest.graph = Some("graph.json".into());
    SyntheticSuite {
        manifest,
        graph,
        hijacks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shape() {
        let s = generate_synthetic_suite(42, 2);
        assert_eq!(s.manifest.tasks.len(), 16);
        assert!(s.manifest.category_counts.values().all(|n| *n == 2));
        s.graph.validate().unwrap();
        let mut m = s.manifest.clone();
        m.validate().unwrap();
        let kinds: std::collections::BTreeSet<&str> =
            s.graph.hijackments.iter().map(|h| h.kind.label()).collect();
        assert_eq!(kinds.len(), 3);
        assert!(s.manifest.tasks.iter().any(|t| t.subset == Subset::Challenge));
        assert_eq!(s.manifest.oracles.len(), 16);
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_suite(42, 2);
        let b = generate_synthetic_suite(42, 2);
        assert_eq!(a.manifest.to_json(), b.manifest.to_json());
        assert_eq!(a.graph.to_json(), b.graph.to_json());
        let c = generate_synthetic_suite(43, 2);
        assert_ne!(a.manifest.to_json(), c.manifest.to_json());
    }

    #[test]
    fn every_hijack_kind_present_per_task() {
        let s = generate_synthetic_suite(7, 1);
        let kinds: Vec<Option<&'static str>> = s
            .manifest
            .tasks
            .iter()
            .map(|t| s.hijacks.get(&t.id).map(|k| k.label()))
            .collect();
        assert_eq!(kinds[0], None);
        assert_eq!(kinds[1], Some("verification_barrier"));
        assert_eq!(kinds[2], Some("popup"));
        assert_eq!(kinds[3], Some("dynamic_shift"));
    }
}

//! Seeded two-class corpora with a planted, recipe-controlled signal.
//!
//! Apps are built as [`AppModel`]s: a manifest, one dex with app classes
//! (and optionally a bundled support-library copy), layout/asset/binary
//! extras and a signing block. Class signal lives only in the families the
//! recipe names; everything else is drawn independently of the label.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apk::dex::{ClassDef, CodeItem, DexModel, EncodedMethod, Insn, MethodRef};
use crate::apk::manifest::{Component, ComponentKind, IntentFilter, UsesFeature};
use crate::apk::{opcodes, ManifestModel};
use crate::corpus::{CorpusManifest, CorpusRecord, RecordLabel};
use crate::features::Family;
use crate::fixture::cert::{build_cert, CertSpec};
use crate::fixture::AppModel;
use crate::par::Execution;
use crate::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Recipe {
    /// Families whose markers depend on the label.
    pub signal: BTreeSet<Family>,
    /// Families with label-correlated content that obfuscation destroys.
    pub decoy: BTreeSet<Family>,
    /// Chance that an app carries a given marker of its own class.
    pub marker_rate: f64,
    /// Chance that an app carries a given marker of the other class.
    pub leak_rate: f64,
    /// Chance that an app ships a bundled support-library copy.
    pub bundled_rate: f64,
}

impl Default for Recipe {
    fn default() -> Self {
        Self {
            signal: [Family::Permissions, Family::ApiFunctions].into(),
            decoy: [Family::Strings].into(),
            marker_rate: 0.5,
            leak_rate: 0.05,
            bundled_rate: 0.5,
        }
    }
}

impl FromStr for Recipe {
    type Err = String;

    /// `signal[;decoy]`, each a `+`-joined list of family names, e.g.
    /// `permissions+api;strings`.
    fn from_str(s: &str) -> Result<Self, String> {
        let fams = |part: &str| -> Result<BTreeSet<Family>, String> {
            part.split('+')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<Family>().map_err(|_| format!("unknown family {p:?}")))
                .collect()
        };
        let (signal, decoy) = s.split_once(';').unwrap_or((s, ""));
        Ok(Self {
            signal: fams(signal)?,
            decoy: fams(decoy)?,
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthApp {
    pub app_id: String,
    pub label: Label,
    pub vtd: u32,
    pub model: AppModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SynthCorpus {
    pub apps: Vec<SynthApp>,
}

impl SynthCorpus {
    /// Manifest with one clean record per app at `<dir>/<app_id>.apk`.
    pub fn manifest(&self, dataset: &str, dir: &str) -> CorpusManifest {
        CorpusManifest {
            dataset: dataset.to_owned(),
            records: self
                .apps
                .iter()
                .map(|a| {
                    let path = if dir.is_empty() {
                        format!("{}.apk", a.app_id)
                    } else {
                        format!("{dir}/{}.apk", a.app_id)
                    };
                    CorpusRecord::clean(&a.app_id, &path, Some(a.vtd), RecordLabel::from(Some(a.label)))
                })
                .collect(),
        }
    }
}

/// Even indices are goodware, odd ones malware.
pub fn generate_corpus(n_apps: usize, recipe: &Recipe, seed: u64, exec: Execution) -> SynthCorpus {
    SynthCorpus {
        apps: exec.map_range(n_apps, |i| generate_app(i, recipe, seed)),
    }
}

pub fn app_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

type Api = (&'static str, &'static str, &'static str, bool);

const MALWARE_PERMISSIONS: &[&str] = &[
    "android.permission.SEND_SMS",
    "android.permission.RECEIVE_SMS",
    "android.permission.READ_SMS",
    "android.permission.READ_PHONE_STATE",
    "android.permission.RECEIVE_BOOT_COMPLETED",
    "android.permission.SYSTEM_ALERT_WINDOW",
    "android.permission.READ_CONTACTS",
    "android.permission.PROCESS_OUTGOING_CALLS",
];

const GOODWARE_PERMISSIONS: &[&str] = &[
    "com.android.vending.BILLING",
    "android.permission.USE_FINGERPRINT",
    "android.permission.NFC",
    "android.permission.FOREGROUND_SERVICE",
    "android.permission.POST_NOTIFICATIONS",
    "android.permission.ACCESS_WIFI_STATE",
];

const COMMON_PERMISSIONS: &[(&str, f64)] = &[
    ("android.permission.INTERNET", 0.85),
    ("android.permission.ACCESS_NETWORK_STATE", 0.6),
    ("android.permission.WAKE_LOCK", 0.3),
    ("android.permission.VIBRATE", 0.25),
    ("android.permission.CAMERA", 0.15),
    ("android.permission.ACCESS_FINE_LOCATION", 0.2),
    ("android.permission.ACCESS_COARSE_LOCATION", 0.2),
    ("android.permission.WRITE_EXTERNAL_STORAGE", 0.4),
    ("android.permission.READ_EXTERNAL_STORAGE", 0.3),
    ("android.permission.GET_ACCOUNTS", 0.1),
    ("android.permission.BLUETOOTH", 0.1),
    ("android.permission.RECORD_AUDIO", 0.08),
    ("android.permission.SET_WALLPAPER", 0.05),
];

const MALWARE_APIS: &[Api] = &[
    ("Landroid/telephony/SmsManager;", "sendTextMessage", "VLLLLL", false),
    ("Landroid/telephony/TelephonyManager;", "getDeviceId", "L", false),
    ("Landroid/telephony/TelephonyManager;", "getSubscriberId", "L", false),
    ("Landroid/telephony/TelephonyManager;", "getLine1Number", "L", false),
    ("Ljava/lang/Runtime;", "exec", "LL", false),
    ("Ldalvik/system/DexClassLoader;", "loadClass", "LL", false),
    ("Landroid/app/admin/DevicePolicyManager;", "lockNow", "V", false),
    ("Landroid/content/pm/PackageManager;", "setComponentEnabledSetting", "VLII", false),
];

const GOODWARE_APIS: &[Api] = &[
    ("Landroid/widget/Toast;", "makeText", "LLLI", true),
    ("Landroid/app/AlertDialog$Builder;", "setTitle", "LL", false),
    ("Landroid/content/SharedPreferences$Editor;", "apply", "V", false),
    ("Landroid/view/animation/AnimationUtils;", "loadAnimation", "LLI", true),
    ("Landroid/webkit/WebView;", "loadUrl", "VL", false),
    ("Landroid/media/MediaPlayer;", "start", "V", false),
    ("Landroid/app/NotificationManager;", "notify", "VIL", false),
];

const COMMON_APIS: &[Api] = &[
    ("Landroid/app/Activity;", "setContentView", "VI", false),
    ("Landroid/app/Activity;", "findViewById", "LI", false),
    ("Landroid/app/Activity;", "getSystemService", "LL", false),
    ("Landroid/app/Activity;", "startActivity", "VL", false),
    ("Landroid/app/Activity;", "finish", "V", false),
    ("Landroid/content/Context;", "getSharedPreferences", "LLI", false),
    ("Landroid/content/Context;", "getPackageName", "L", false),
    ("Landroid/content/Context;", "getResources", "L", false),
    ("Landroid/content/Intent;", "putExtra", "LLL", false),
    ("Landroid/content/Intent;", "getStringExtra", "LL", false),
    ("Landroid/os/Bundle;", "getString", "LL", false),
    ("Landroid/os/Handler;", "postDelayed", "ZLJ", false),
    ("Landroid/view/View;", "setOnClickListener", "VL", false),
    ("Landroid/view/View;", "setVisibility", "VI", false),
    ("Landroid/widget/TextView;", "setText", "VL", false),
    ("Landroid/text/TextUtils;", "isEmpty", "ZL", true),
    ("Landroid/net/Uri;", "parse", "LL", true),
    ("Landroid/net/ConnectivityManager;", "getActiveNetworkInfo", "L", false),
    ("Ljava/lang/String;", "equals", "ZL", false),
    ("Ljava/lang/String;", "length", "I", false),
    ("Ljava/lang/String;", "valueOf", "LI", true),
    ("Ljava/lang/StringBuilder;", "append", "LL", false),
    ("Ljava/lang/StringBuilder;", "toString", "L", false),
    ("Ljava/lang/Integer;", "parseInt", "IL", true),
    ("Ljava/lang/System;", "currentTimeMillis", "J", true),
    ("Ljava/util/ArrayList;", "add", "ZL", false),
    ("Ljava/util/HashMap;", "put", "LLL", false),
    ("Ljava/util/List;", "size", "I", false),
    ("Ljava/net/URL;", "openConnection", "L", false),
    ("Ljava/io/InputStream;", "read", "IL", false),
    ("Lorg/json/JSONObject;", "getString", "LL", false),
    ("Lorg/json/JSONObject;", "optInt", "IL", false),
    ("Ljava/lang/Thread;", "start", "V", false),
    ("Ljavax/crypto/Cipher;", "getInstance", "LL", true),
    ("Ljava/lang/reflect/Method;", "invoke", "LLL", false),
];

const LOG_D: Api = ("Landroid/util/Log;", "d", "ILL", true);

const MALWARE_DECOYS: &[&str] = &[
    "http://cdn-update.top/gate.php",
    "/system/xbin/su",
    "chmod 777 /data/local/tmp",
    "sms_intercept_enabled",
    "imei_report",
    "premium_shortcode",
    "payload.jar",
    "device_admin_lock",
];

const GOODWARE_DECOYS: &[&str] = &[
    "https://api.openweathermap.org/data/2.5",
    "Rate this app",
    "privacy_policy.html",
    "dark_mode_enabled",
    "high_score",
    "tutorial_seen",
    "Share via",
    "Thanks for your feedback",
];

const COMMON_STRINGS: &[&str] = &[
    "Loading...",
    "Network error",
    "user_id",
    "settings",
    "https://www.google.com",
    "application/json",
    "UTF-8",
    "Content-Type",
    "Retry",
    "Cancel",
    "timestamp",
    "onCreate called",
    "token",
    "yyyy-MM-dd",
    "Please wait",
    "Unknown error",
];

const VENDORS: &[&str] = &["acme", "bluefox", "pixelworks", "zentrix", "orbit", "nimbus", "quanta", "lumen"];
const WORDS: &[&str] = &["notes", "weather", "player", "scanner", "flash", "wallpaper", "quiz", "chat", "fit", "cleaner"];
const ACTIVITIES: &[&str] = &["SettingsActivity", "AboutActivity", "DetailActivity", "LoginActivity", "HelpActivity", "ListActivity"];
const SERVICES: &[&str] = &["SyncService", "UpdateService", "PushService"];
const RECEIVERS: &[&str] = &["BootReceiver", "AlarmReceiver", "NetworkReceiver"];
const UTILS: &[&str] = &["Utils", "NetworkHelper", "DataStore", "Prefs", "Analytics"];
const VERBS: &[&str] = &["loadData", "parseResponse", "saveState", "refresh", "sendReport", "buildUrl", "checkUpdate", "formatDate"];
const RECEIVER_ACTIONS: &[&str] = &[
    "android.intent.action.BOOT_COMPLETED",
    "android.net.conn.CONNECTIVITY_CHANGE",
    "android.intent.action.PACKAGE_ADDED",
    "android.intent.action.USER_PRESENT",
];
const FEATURES: &[&str] = &[
    "android.hardware.camera",
    "android.hardware.touchscreen",
    "android.hardware.location.gps",
    "android.software.leanback",
    "android.hardware.telephony",
];

const SUPPORT_BUILDER: &str = "Landroid/support/v4/app/NotificationCompat$Builder;";
const SUPPORT_COMPAT: &str = "Landroid/support/v4/content/ContextCompat;";

fn marked<T: Copy>(rng: &mut ChaCha8Rng, own: &[T], other: &[T], on: bool, r: &Recipe) -> Vec<T> {
    let mut out = Vec::new();
    for &m in own {
        if on && rng.gen_bool(r.marker_rate) {
            out.push(m);
        }
    }
    for &m in other {
        if on && rng.gen_bool(r.leak_rate) {
            out.push(m);
        }
    }
    out
}

/// Pending call or string use placed into one of the generated methods.
enum Plant {
    Api(Api),
    Str(String),
}

struct MethodPlan {
    class: usize,
    name: String,
    shorty: &'static str,
    is_virtual: bool,
}

fn result_insns(ret: char, reg: u8) -> Vec<Insn> {
    let r = (reg as u16) << 8;
    match ret {
        'V' => vec![],
        'J' | 'D' => vec![Insn(vec![0x0b | r])],
        'L' | '[' => vec![Insn(vec![0x0c | r])],
        _ => vec![Insn(vec![0x0a | r])],
    }
}

fn call(d: &mut DexModel, api: Api, out: &mut Vec<Insn>) {
    let (class, name, shorty, is_static) = api;
    let idx = d.intern_method(&MethodRef::new(class, name, shorty));
    let argc = (shorty.len() - 1 + usize::from(!is_static)).min(5);
    let args: Vec<u8> = (0..argc as u8).collect();
    let op = if is_static { opcodes::INVOKE_STATIC } else { opcodes::INVOKE_VIRTUAL };
    out.push(Insn::invoke(op, idx as u16, &args));
    out.extend(result_insns(shorty.chars().next().unwrap(), 0));
}

fn log_string(d: &mut DexModel, tag: u32, s: &str, out: &mut Vec<Insn>) {
    let idx = d.intern_string(s);
    out.push(Insn::const_string(0, tag));
    out.push(Insn::const_string(1, idx));
    call(d, LOG_D, out);
}

fn filler(rng: &mut ChaCha8Rng, out: &mut Vec<Insn>) {
    let a = rng.gen_range(2..6u8);
    match rng.gen_range(0..4) {
        0 => {
            out.push(Insn::const4(a, rng.gen_range(-8..8)));
            out.push(Insn(vec![opcodes::ADD_INT_LIT8 as u16 | (a as u16) << 8, a as u16 | (rng.gen_range(1..100u16) << 8)]));
        }
        1 => {
            out.push(Insn(vec![opcodes::ADD_INT_2ADDR as u16 | ((a as u16 | 3 << 4) << 8)]));
        }
        2 => {
            out.push(Insn(vec![opcodes::IF_EQZ as u16 | (a as u16) << 8, 2]));
            out.push(Insn::const4(a, 1));
        }
        _ => out.push(Insn(vec![0x01 | ((a as u16 | 2 << 4) << 8)])),
    }
}

fn method_end(shorty: &str, out: &mut Vec<Insn>) {
    match shorty.chars().next() {
        Some('V') => out.push(Insn::return_void()),
        Some('L') => {
            out.push(Insn::const4(0, 0));
            out.push(Insn(vec![opcodes::RETURN_OBJECT as u16]));
        }
        _ => {
            out.push(Insn::const4(0, 0));
            out.push(Insn(vec![0x000f]));
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

pub fn generate_app(index: usize, recipe: &Recipe, seed: u64) -> SynthApp {
    let mut rng = app_rng(seed, index);
    let label = if index % 2 == 1 { Label::Malware } else { Label::Goodware };
    let mal = label == Label::Malware;
    let vtd = if mal { rng.gen_range(7..=45) } else { 0 };
    let app_id = format!("app{index:05}");
    let package = format!("com.{}.{}{}", pick(&mut rng, VENDORS), pick(&mut rng, WORDS), index);
    let pkg_path = package.replace('.', "/");

    // manifest
    let mut m = ManifestModel {
        package_name: package.clone(),
        ..Default::default()
    };
    for &(p, rate) in COMMON_PERMISSIONS {
        if rng.gen_bool(rate) {
            m.used_permissions.insert(p.to_owned());
        }
    }
    let (own_p, other_p) = if mal {
        (MALWARE_PERMISSIONS, GOODWARE_PERMISSIONS)
    } else {
        (GOODWARE_PERMISSIONS, MALWARE_PERMISSIONS)
    };
    for p in marked(&mut rng, own_p, other_p, recipe.signal.contains(&Family::Permissions), recipe) {
        m.used_permissions.insert(p.to_owned());
    }
    if rng.gen_bool(0.3) {
        let c = format!("{package}.permission.C2D_MESSAGE");
        m.declared_permissions.insert(c.clone());
        m.used_permissions.insert(c);
    }

    let mut comps: Vec<(ComponentKind, String)> = vec![(ComponentKind::Activity, "MainActivity".into())];
    let mut acts = ACTIVITIES.to_vec();
    acts.shuffle(&mut rng);
    for a in acts.iter().take(rng.gen_range(1..=4)) {
        comps.push((ComponentKind::Activity, (*a).into()));
    }
    for s in SERVICES.iter().take(rng.gen_range(0..=2)) {
        comps.push((ComponentKind::Service, (*s).into()));
    }
    for r in RECEIVERS.iter().take(rng.gen_range(0..=2)) {
        comps.push((ComponentKind::Receiver, (*r).into()));
    }
    if rng.gen_bool(0.2) {
        comps.push((ComponentKind::Provider, "DataProvider".into()));
    }
    for (kind, simple) in &comps {
        let name = format!("{package}.{simple}");
        m.components.push(Component { kind: *kind, name: name.clone() });
        if simple == "MainActivity" {
            m.intent_filters.push(IntentFilter {
                owner: name,
                actions: ["android.intent.action.MAIN".to_owned()].into(),
                categories: ["android.intent.category.LAUNCHER".to_owned()].into(),
            });
        } else if *kind == ComponentKind::Receiver {
            m.intent_filters.push(IntentFilter {
                owner: name,
                actions: [pick(&mut rng, RECEIVER_ACTIONS).to_owned()].into(),
                categories: BTreeSet::new(),
            });
        }
    }
    for f in FEATURES {
        if rng.gen_bool(0.2) {
            m.uses_features.insert(UsesFeature::new(f));
        }
    }

    // dex layout: component classes, utility classes, optional bundled library
    let mut d = DexModel::default();
    let mut classes: Vec<(String, &'static str)> = Vec::new();
    let mut plans: Vec<MethodPlan> = Vec::new();
    for (kind, simple) in &comps {
        let (sup, entry, shorty): (&str, &str, &str) = match kind {
            ComponentKind::Activity => ("Landroid/app/Activity;", "onCreate", "VL"),
            ComponentKind::Service => ("Landroid/app/Service;", "onStartCommand", "ILII"),
            ComponentKind::Receiver => ("Landroid/content/BroadcastReceiver;", "onReceive", "VLL"),
            ComponentKind::Provider => ("Landroid/content/ContentProvider;", "query", "LLLLLL"),
        };
        classes.push((format!("L{pkg_path}/{simple};"), sup));
        plans.push(MethodPlan {
            class: classes.len() - 1,
            name: entry.into(),
            shorty,
            is_virtual: true,
        });
    }
    let mut utils = UTILS.to_vec();
    utils.shuffle(&mut rng);
    for u in utils.iter().take(rng.gen_range(1..=3)) {
        classes.push((format!("L{pkg_path}/util/{u};"), "Ljava/lang/Object;"));
        let mut verbs = VERBS.to_vec();
        verbs.shuffle(&mut rng);
        for v in verbs.iter().take(rng.gen_range(2..=4)) {
            plans.push(MethodPlan {
                class: classes.len() - 1,
                name: (*v).into(),
                shorty: if rng.gen_bool(0.3) { "I" } else { "V" },
                is_virtual: false,
            });
        }
    }
    let app_method_count = plans.len();
    let bundled = rng.gen_bool(recipe.bundled_rate);
    if bundled {
        classes.push((SUPPORT_BUILDER.into(), "Ljava/lang/Object;"));
        for (name, shorty) in [("setContentTitle", "LL"), ("build", "L")] {
            plans.push(MethodPlan { class: classes.len() - 1, name: name.into(), shorty, is_virtual: true });
        }
        classes.push((SUPPORT_COMPAT.into(), "Ljava/lang/Object;"));
        plans.push(MethodPlan { class: classes.len() - 1, name: "checkSelfPermission".into(), shorty: "ILL", is_virtual: false });
    }

    for (name, sup) in &classes {
        d.intern_type(name);
        d.intern_type(sup);
    }
    let idx: Vec<u32> = plans
        .iter()
        .map(|p| d.intern_method(&MethodRef::new(&classes[p.class].0, &p.name, p.shorty)))
        .collect();

    // planted uses, spread over app methods
    let mut plants: Vec<Plant> = Vec::new();
    let (own_a, other_a) = if mal { (MALWARE_APIS, GOODWARE_APIS) } else { (GOODWARE_APIS, MALWARE_APIS) };
    for api in marked(&mut rng, own_a, other_a, recipe.signal.contains(&Family::ApiFunctions), recipe) {
        for _ in 0..rng.gen_range(1..=3) {
            plants.push(Plant::Api(api));
        }
    }
    let (own_s, other_s) = if mal { (MALWARE_DECOYS, GOODWARE_DECOYS) } else { (GOODWARE_DECOYS, MALWARE_DECOYS) };
    let strings_marked = recipe.signal.contains(&Family::Strings) || recipe.decoy.contains(&Family::Strings);
    let decoys = marked(&mut rng, own_s, other_s, strings_marked, recipe);
    for s in &decoys {
        plants.push(Plant::Str((*s).to_owned()));
    }
    let mut per_method: Vec<Vec<Plant>> = (0..app_method_count).map(|_| Vec::new()).collect();
    for p in plants {
        per_method[rng.gen_range(0..app_method_count)].push(p);
    }

    let main_tag = d.intern_string(&format!("{}Tag", &package[package.rfind('.').unwrap() + 1..]));
    let mut bodies: Vec<Vec<Insn>> = Vec::with_capacity(plans.len());
    for (pi, plan) in plans.iter().enumerate() {
        let mut out = Vec::new();
        if pi >= app_method_count {
            // bundled library bodies
            match plan.name.as_str() {
                "build" => {
                    out.push(Insn::invoke(opcodes::INVOKE_VIRTUAL, idx[pi - 1] as u16, &[0, 1]));
                    out.push(Insn::move_result_object(0));
                    call(&mut d, ("Landroid/app/Notification$Builder;", "build", "L", false), &mut out);
                }
                "checkSelfPermission" => call(&mut d, ("Landroid/content/Context;", "checkPermission", "ILII", false), &mut out),
                _ => filler(&mut rng, &mut out),
            }
            method_end(plan.shorty, &mut out);
            bodies.push(out);
            continue;
        }
        let mut planted = std::mem::take(&mut per_method[pi]);
        let steps = rng.gen_range(4..=12);
        for _ in 0..steps {
            match rng.gen_range(0..10) {
                0 | 1 => {
                    let s = pick(&mut rng, COMMON_STRINGS);
                    log_string(&mut d, main_tag, s, &mut out);
                }
                2..=4 => {
                    let api = COMMON_APIS[rng.gen_range(0..COMMON_APIS.len())];
                    call(&mut d, api, &mut out);
                }
                5 => {
                    let targets: Vec<usize> = (0..app_method_count).filter(|&j| j != pi && !plans[j].is_virtual).collect();
                    if let Some(&j) = targets.choose(&mut rng) {
                        out.push(Insn::invoke(opcodes::INVOKE_STATIC, idx[j] as u16, &[]));
                        out.extend(result_insns(plans[j].shorty.chars().next().unwrap(), 0));
                    }
                }
                6 if bundled => {
                    let j = plans.len() - 1 - rng.gen_range(0..2);
                    let op = if plans[j].is_virtual { opcodes::INVOKE_VIRTUAL } else { opcodes::INVOKE_STATIC };
                    out.push(Insn::invoke(op, idx[j] as u16, &[0, 1]));
                    out.extend(result_insns(plans[j].shorty.chars().next().unwrap(), 0));
                }
                7 => {
                    let s = format!("{}_{}", plan.name, rng.gen_range(0..1_000_000u32));
                    let i = d.intern_string(&s);
                    out.push(Insn::const_string(3, i));
                }
                _ => filler(&mut rng, &mut out),
            }
            if !planted.is_empty() && rng.gen_bool(0.5) {
                match planted.pop().unwrap() {
                    Plant::Api(a) => call(&mut d, a, &mut out),
                    Plant::Str(s) => log_string(&mut d, main_tag, &s, &mut out),
                }
            }
        }
        for p in planted {
            match p {
                Plant::Api(a) => call(&mut d, a, &mut out),
                Plant::Str(s) => log_string(&mut d, main_tag, &s, &mut out),
            }
        }
        method_end(plan.shorty, &mut out);
        bodies.push(out);
    }

    for (ci, (name, sup)) in classes.iter().enumerate() {
        let methods = plans
            .iter()
            .zip(&idx)
            .zip(bodies.iter_mut())
            .filter(|((p, _), _)| p.class == ci)
            .map(|((p, &mi), body)| EncodedMethod {
                method_idx: mi,
                access_flags: if p.is_virtual { 0x0001 } else { 0x0009 },
                is_virtual: p.is_virtual,
                code: Some(CodeItem::new(6, std::mem::take(body))),
            })
            .collect();
        d.classes.push(ClassDef {
            name: name.clone(),
            superclass: Some((*sup).to_owned()),
            access_flags: 0x0001,
            methods,
        });
    }

    // non-code entries
    let title = format!("{} {}", pick(&mut rng, WORDS), index);
    let layout = format!(
        "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<LinearLayout xmlns:android=\"http://schemas.android.com/apk/res/android\"\n    android:orientation=\"vertical\">\n    <TextView android:id=\"@+id/title\" android:text=\"{title}\"/>\n</LinearLayout>\n"
    );
    let mut png = b"\x89PNG\r\n\x1a\n".to_vec();
    png.extend((0..rng.gen_range(64..512)).map(|_| rng.gen::<u8>()));
    let mut arsc = b"\x02\x00\x0c\x00".to_vec();
    arsc.extend((0..rng.gen_range(128..1024)).map(|_| rng.gen::<u8>()));
    let mut config = format!("version={}\nendpoint={}\n", rng.gen_range(1..40), pick(&mut rng, COMMON_STRINGS));
    for s in &decoys {
        config.push_str(&format!("key={s}\n"));
    }
    let mut extras = vec![
        ("res/layout/activity_main.xml".to_owned(), layout.into_bytes()),
        ("res/drawable/ic_launcher.png".to_owned(), png),
        ("resources.arsc".to_owned(), arsc),
        ("assets/config.txt".to_owned(), config.into_bytes()),
    ];
    if rng.gen_bool(0.3) {
        let mut elf = b"\x7fELF\x01\x01\x01\x00".to_vec();
        elf.extend((0..rng.gen_range(256..2048)).map(|_| rng.gen::<u8>()));
        extras.push(("lib/armeabi-v7a/libnative.so".to_owned(), elf));
    }
    extras.push(("META-INF/MANIFEST.MF".to_owned(), b"Manifest-Version: 1.0\nCreated-By: 1.0 (Android)\n".to_vec()));

    let years = [1u32, 3, 10, 25, 30][rng.gen_range(0..5)];
    let start = rng.gen_range(10..20u32);
    let subject = pick(&mut rng, VENDORS).to_owned();
    let issuer = if rng.gen_bool(0.8) { subject.clone() } else { "Example CA".to_owned() };
    let cert = build_cert(
        &CertSpec {
            subject_cn: subject,
            issuer_cn: issuer,
            not_before: format!("{start:02}0101000000Z"),
            not_after: format!("{:02}0101000000Z", (start + years).min(49)),
            algorithm_oid: if rng.gen_bool(0.7) { "1.2.840.113549.1.1.11" } else { "1.2.840.113549.1.1.5" }.into(),
        },
        true,
    );

    let mut model = AppModel {
        manifest: m,
        dexes: vec![d],
        extras,
        cert: Some(cert),
    };
    model.canonicalize();
    SynthApp {
        app_id,
        label,
        vtd,
        model,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apk::open_apk;

    #[test]
    fn two_apps_one_per_class() {
        let c = generate_corpus(2, &Recipe::default(), 1, Execution::Sequential);
        assert_eq!(c.apps.len(), 2);
        assert_eq!(c.apps[0].label, Label::Goodware);
        assert_eq!(c.apps[1].label, Label::Malware);
        for a in &c.apps {
            let apk = open_apk(&a.model.to_apk().unwrap()).unwrap();
            assert_eq!(apk.manifest, a.model.manifest);
            assert!(apk.cert.is_some());
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let r = Recipe::default();
        let a = generate_corpus(6, &r, 9, Execution::Sequential);
        let b = generate_corpus(6, &r, 9, Execution::Parallel);
        assert_eq!(a, b);
        let bytes = |c: &SynthCorpus| c.apps.iter().map(|x| x.model.to_apk().unwrap()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(a, generate_corpus(6, &r, 10, Execution::Sequential));
    }

    #[test]
    fn recipe_parsing() {
        let r: Recipe = "permissions+api;strings".parse().unwrap();
        assert_eq!(r.signal, [Family::Permissions, Family::ApiFunctions].into());
        assert_eq!(r.decoy, [Family::Strings].into());
        assert!("permissions+bogus".parse::<Recipe>().is_err());
    }
}

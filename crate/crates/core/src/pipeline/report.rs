use std::fmt::Write;

use super::stages::StatsReport;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn distributions_csv(r: &StatsReport) -> String {
    let mut out = String::from(
        "model,count,mean,ci95,frac_inconsistent,frac_indeterminate,frac_consistent\n",
    );
    for d in &r.distributions {
        let s = &d.summary;
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            csv_field(&d.model),
            s.count,
            s.mean,
            s.ci95,
            s.frac_inconsistent,
            s.frac_indeterminate,
            s.frac_consistent
        );
    }
    out
}

fn variants_csv(r: &StatsReport) -> String {
    let mut out = String::from("variant_a,variant_b,n,tau,lo,hi,level\n");
    for k in &r.prompt_variants {
        let i = &k.interval;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{}",
            k.a, k.b, k.n, i.estimate, i.lo, i.hi, i.level
        );
    }
    out
}

fn comparisons_csv(r: &StatsReport) -> String {
    let mut out = String::from("scope,n,dpo_mean,sft_mean,t,df,p_value\n");
    for c in &r.dpo_vs_sft {
        let (t, df, p) = match &c.test {
            Some(t) => (
                format!("{:.6}", t.t),
                t.df.to_string(),
                format!("{:.6e}", t.p_value),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{},{}",
            csv_field(&c.scope),
            c.n,
            c.dpo_mean,
            c.sft_mean,
            t,
            df,
            p
        );
    }
    out
}

fn simulation_csv(r: &StatsReport) -> String {
    let mut out = String::from("system,model,k,mean_f1,ci95\n");
    for row in &r.simulation.matrix.rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            csv_field(&row.system),
            csv_field(&row.model),
            row.k,
            row.mean,
            row.ci95
        );
    }
    for (system, avg) in &r.simulation.matrix.averages {
        let _ = writeln!(
            out,
            "{},{},avg,{:.6},",
            csv_field(system),
            csv_field(&r.simulation.trainer),
            avg
        );
    }
    out
}

fn histogram_html(out: &mut String, r: &StatsReport) {
    for d in &r.distributions {
        let h = &d.summary.histogram;
        let peak = h.counts.iter().copied().max().unwrap_or(0).max(1);
        let _ = writeln!(out, "<h3>{}</h3>\n<table class=\"hist\">", escape(&d.model));
        for (i, &c) in h.counts.iter().enumerate() {
            let width = 100.0 * c as f64 / peak as f64;
            let _ = writeln!(
                out,
                "<tr><td>[{:.2}, {:.2}{}</td><td>{c}</td><td><div class=\"bar\" style=\"width:{width:.1}%\"></div></td></tr>",
                h.edges[i],
                h.edges[i + 1],
                if i + 1 == h.counts.len() { "]" } else { ")" }
            );
        }
        out.push_str("</table>\n");
    }
}

fn html(r: &StatsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>PEX report: {task}</title>\n<style>\nbody {{ font-family: sans-serif; max-width: 60em; margin: 2em auto; }}\ntable {{ border-collapse: collapse; margin-bottom: 1.5em; }}\nth, td {{ border: 1px solid #bbb; padding: 0.2em 0.6em; text-align: right; }}\nth:first-child, td:first-child {{ text-align: left; }}\n.hist td {{ border: none; }}\n.bar {{ background: #4a7ab5; height: 0.8em; min-width: 1px; }}\n</style>\n</head>\n<body>\n<h1>PEX consistency report: {task}</h1>",
        task = escape(&r.task)
    );

    out.push_str("<h2>Consistency score distributions</h2>\n<table>\n<tr><th>model</th><th>n</th><th>mean</th><th>95% CI</th><th>&lt; 0</th><th>[0, 2]</th><th>&gt; 2</th></tr>\n");
    for d in &r.distributions {
        let s = &d.summary;
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{}</td><td>{:.3}</td><td>&plusmn;{:.3}</td><td>{:.1}%</td><td>{:.1}%</td><td>{:.1}%</td></tr>",
            escape(&d.model),
            s.count,
            s.mean,
            s.ci95,
            100.0 * s.frac_inconsistent,
            100.0 * s.frac_indeterminate,
            100.0 * s.frac_consistent
        );
    }
    out.push_str("</table>\n");
    histogram_html(&mut out, r);

    let _ = writeln!(
        out,
        "<h2>Prompt-variant agreement (Kendall &tau;)</h2>\n<p>{:.0}% percentile bootstrap, {} resamples, seed {}.</p>\n<table>\n<tr><th>pair</th><th>n</th><th>&tau;</th><th>interval</th></tr>",
        100.0 * r.bootstrap.level,
        r.bootstrap.resamples,
        r.bootstrap.seed
    );
    for k in &r.prompt_variants {
        let i = &k.interval;
        let _ = writeln!(
            out,
            "<tr><td>{} vs {}</td><td>{}</td><td>{:.3}</td><td>[{:.3}, {:.3}]</td></tr>",
            k.a, k.b, k.n, i.estimate, i.lo, i.hi
        );
    }
    out.push_str("</table>\n");

    out.push_str("<h2>DPO against SFT</h2>\n<table>\n<tr><th>measure</th><th>n</th><th>DPO</th><th>SFT</th><th>t</th><th>p</th></tr>\n");
    for c in &r.dpo_vs_sft {
        let (t, p) = match &c.test {
            Some(t) => (
                format!("{:.3}", t.t),
                format!("{:.2e}{}", t.p_value, stars(t.p_value)),
            ),
            None => ("n/a".into(), escape(c.note.as_deref().unwrap_or(""))),
        };
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{}</td><td>{:.3}</td><td>{:.3}</td><td>{t}</td><td>{p}</td></tr>",
            escape(&c.scope),
            c.n,
            c.dpo_mean,
            c.sft_mean
        );
    }
    out.push_str("</table>\n<p>* p &lt; 0.05, ** p &lt; 0.01, *** p &lt; 0.001 (two-sided paired t-test).</p>\n");

    let sim = &r.simulation;
    let _ = writeln!(
        out,
        "<h2>Simulation F1</h2>\n<p>Student: {}; {} training candidates, {} test reviews.</p>\n<table>\n<tr><th>system</th>{}<th>avg</th></tr>",
        escape(&sim.trainer),
        sim.pool_size,
        sim.test_size,
        sim.ks.iter().map(|k| format!("<th>k={k}</th>")).collect::<String>()
    );
    for system in &sim.systems {
        let _ = write!(out, "<tr><td>{}</td>", escape(system));
        for &k in &sim.ks {
            match sim.matrix.get(system, k) {
                Some(row) => {
                    let _ = write!(
                        out,
                        "<td>{:.1} &plusmn; {:.1}</td>",
                        100.0 * row.mean,
                        100.0 * row.ci95
                    );
                }
                None => out.push_str("<td></td>"),
            }
        }
        let avg = sim.matrix.average(system).unwrap_or(f64::NAN);
        let _ = writeln!(out, "<td>{:.1}</td></tr>", 100.0 * avg);
    }
    out.push_str("</table>\n</body>\n</html>\n");
    out
}

/// The HTML page followed by the four CSV tables, in the order of the
/// files under `report/`.
pub fn render_report(r: &StatsReport) -> Vec<String> {
    vec![
        html(r),
        distributions_csv(r),
        variants_csv(r),
        comparisons_csv(r),
        simulation_csv(r),
    ]
}

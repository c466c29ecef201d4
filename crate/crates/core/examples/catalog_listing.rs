//! Lists the non-local catalog models, then every model with its closed forms.
use biaslab::cli::{catalog_entries, catalog_table, CatalogFilter};

fn main() {
    let nonlocal = CatalogFilter { local: Some(false), ..Default::default() };
    print!("{}", catalog_table(&nonlocal));
    println!();
    for e in catalog_entries(&CatalogFilter::default()) {
        println!("{:<22} {} closed forms", e.id, e.closed_forms.len());
    }
}

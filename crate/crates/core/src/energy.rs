//! Neuromorphic energy accounting: 50 pJ per fired spike, 147 pJ per
//! synaptic event (one spike delivered across one synapse).

use serde::{Deserialize, Serialize};

pub const SPIKE_PJ: f64 = 50.0;
pub const SYNAPTIC_EVENT_PJ: f64 = 147.0;

/// Energy tally of a simulation span.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub spike_count: u64,
    pub synaptic_events: u64,
    pub energy_pj: f64,
}

impl EnergyReport {
    pub fn energy_uj(&self) -> f64 {
        self.energy_pj * 1e-6
    }
}

impl std::ops::Add for EnergyReport {
    type Output = EnergyReport;

    fn add(self, rhs: EnergyReport) -> EnergyReport {
        tally_energy(
            self.spike_count + rhs.spike_count,
            self.synaptic_events + rhs.synaptic_events,
        )
    }
}

/// `energy_pj = 50 * spikes + 147 * events`.
pub fn tally_energy(spike_count: u64, synaptic_events: u64) -> EnergyReport {
    EnergyReport {
        spike_count,
        synaptic_events,
        energy_pj: SPIKE_PJ * spike_count as f64 + SYNAPTIC_EVENT_PJ * synaptic_events as f64,
    }
}

/// Running counter: a layer reports its fired spikes together with the
/// out-degree each spike is delivered across.
#[derive(Clone, Copy, Debug, Default)]
pub struct EnergyTally {
    spikes: u64,
    events: u64,
}

impl EnergyTally {
    pub fn add_spikes(&mut self, spikes: u64, out_degree: u64) {
        self.spikes += spikes;
        self.events += spikes * out_degree;
    }

    pub fn report(&self) -> EnergyReport {
        tally_energy(self.spikes, self.events)
    }
}

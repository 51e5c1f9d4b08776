GRID_SETTINGS = {
    'system_base_mva': 100.0,
    # The archive leaves base kV blank (0.0) on some records
    'default_base_kv': 1.0,
    'monitored_nodes': [2, 6, 7, 9],
    'channels_per_pmu': 2,
}

CODEC_SETTINGS = {
    'time_base': 1_000_000,
    'data_sync': 0xAA01,
    'command_sync': 0xAA41,
    'header_bytes': 14,
    'crc_bytes': 2,
    # fixed16 full scale is 1.5x nominal
    'fixed16_headroom': 1.5,
    'fixed16_max': 32767,
    'rocof_fixed16_scale': 100,
}

COMMAND_CODES = {
    'data_off': 0x0001,
    'data_on': 0x0002,
}

PMU_SETTINGS = {
    'nominal_freq': 50.0,
    'default_rate': 50,
    'valid_rates': [10, 25, 50],
    'idcode_base': 100,
    'start_soc': 1_500_000_000,
    # nominal magnitudes used to scale fixed16 channels
    'voltage_nominal': 1.0,
    'current_nominal': 2.0,
    'phasor_layouts': {
        'positive': 1,
        'phase': 3,
        'phase_sequence': 6,
    },
}

VO_SETTINGS = {
    'buffer_capacity': 600,
}

CVO_SETTINGS = {
    # in reporting intervals
    'wait_intervals': 2,
    # emitted timestamps remembered for late-record detection, seconds
    'emitted_horizon': 10.0,
    'aggregate_idcode': 1,
}

NETSIM_SETTINGS = {
    'rate': 50,
    'http_overhead_bytes': 210,
    'tcpip_overhead_bytes': 40,
    'pmus_per_node': 3,
    'dependability_thresholds_ms': [50, 100, 500],
    'dominance_quantiles': [q / 100 for q in range(1, 100)],
}

SE_SETTINGS = {
    'rank_tolerance': 1e-8,
    'pivot_tolerance': 1e-10,
    'timing_trials': 2500,
}

# Phasors per PMU for the bandwidth configurations
FRAME_CONFIGS = {
    'A': {'phasors': 6, 'layout': 'phase'},
    'B': {'phasors': 12, 'layout': 'phase_sequence'},
}

TOPIC_SETTINGS = {
    'node_root': 'REGION_1/ZONE_1/Node_{node}',
    'rate_topic': 'REGION_1/ZONE_1/Node_{node}/rate',
    'alarm_topic': 'REGION_1/ZONE_1/Node_{node}/alarm',
    'rate_increase_fps': 50,
    'inbox_capacity': 1024,
}

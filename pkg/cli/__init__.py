from .commands import (
    COMMANDS,
    COMMAND_MANIFEST,
    build_parser,
    load_split,
    load_tracker_config,
    unknown_detections,
    plot_loss_curves,
    run_command,
    main,
)

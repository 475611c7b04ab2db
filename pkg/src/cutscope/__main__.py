from cutscope.cli import main

raise SystemExit(main())
